use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_hurwitz, Matrix};

/// Position/velocity pair; flattened as `[x, v]` inside the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleIntegratorState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl DoubleIntegratorState {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut s = self.x.clone();
        s.extend_from_slice(&self.v);
        s
    }

    pub fn from_slice(s: &[f64]) -> Self {
        let d = s.len() / 2;
        Self {
            x: s[..d].to_vec(),
            v: s[d..].to_vec(),
        }
    }
}

/// Per-axis PD gains: `u = k_p·(x − g) + k_d·v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleIntegratorGains {
    pub kp: f64,
    pub kd: f64,
}

impl DoubleIntegratorGains {
    /// Rejects gains whose closed loop is not Hurwitz.
    pub fn new(kp: f64, kd: f64) -> Result<Self> {
        let gains = Self { kp, kd };
        gains.check()?;
        Ok(gains)
    }

    pub fn check(&self) -> Result<()> {
        if !is_hurwitz(&di_closed_loop(*self, 1))? {
            return Err(Error::Config(format!(
                "gains kp = {}, kd = {} do not stabilize the double integrator",
                self.kp, self.kd
            )));
        }
        Ok(())
    }

    pub fn as_vec(&self) -> Vec<f64> {
        vec![self.kp, self.kd]
    }
}

/// `A + BK` for the `dim`-axis double integrator with state `[x, v]`.
pub fn di_closed_loop(gains: DoubleIntegratorGains, dim: usize) -> Matrix {
    let mut a = Matrix::zeros(2 * dim, 2 * dim);
    for i in 0..dim {
        a[(i, dim + i)] = 1.0;
        a[(dim + i, i)] = gains.kp;
        a[(dim + i, dim + i)] = gains.kd;
    }
    a
}

pub fn di_controller(s: &[f64], g: &[f64], gains: DoubleIntegratorGains) -> Vec<f64> {
    let d = g.len();
    (0..d)
        .map(|i| gains.kp * (s[i] - g[i]) + gains.kd * s[d + i])
        .collect()
}

/// `ẋ = v`, `v̇ = u`.
pub fn di_dynamics(s: &[f64], u: &[f64]) -> Vec<f64> {
    let d = s.len() / 2;
    let mut out = s[d..].to_vec();
    out.extend_from_slice(&u[..d]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::rk4_step;

    const PAPER: DoubleIntegratorGains = DoubleIntegratorGains { kp: -6.0, kd: -4.0 };

    #[test]
    fn controller_examples() {
        assert_eq!(di_controller(&[0.0; 4], &[0.0, 0.0], PAPER), vec![0.0, 0.0]);
        assert_eq!(
            di_controller(&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0], PAPER),
            vec![-6.0, 0.0]
        );
    }

    #[test]
    fn hurwitz_guard() {
        assert!(DoubleIntegratorGains::new(-6.0, -4.0).is_ok());
        assert!(DoubleIntegratorGains::new(6.0, -4.0).is_err());
        assert!(DoubleIntegratorGains::new(-6.0, 0.0).is_err());
    }

    #[test]
    fn state_round_trip() {
        let s = DoubleIntegratorState {
            x: vec![1.0, 2.0],
            v: vec![3.0, 4.0],
        };
        assert_eq!(DoubleIntegratorState::from_slice(&s.to_vec()), s);
    }

    #[test]
    fn step_response_matches_analytic() {
        // ẍ = −6x − 4ẋ from x = 1 at rest: roots −2 ± i√2.
        let w = 2f64.sqrt();
        let exact = |t: f64| (-2.0 * t).exp() * ((w * t).cos() + 2.0 / w * (w * t).sin());
        let dt = 1e-3;
        let mut s = vec![1.0, 0.0];
        let mut t = 0.0;
        let mut worst: f64 = 0.0;
        for _ in 0..5000 {
            // Feedback evaluated inside the stages so the comparison isolates RK4.
            s = rk4_step(|s, _| vec![s[1], -6.0 * s[0] - 4.0 * s[1]], &s, &[], dt).unwrap();
            t += dt;
            worst = worst.max((s[0] - exact(t)).abs());
        }
        assert!(worst < 1e-10, "{worst}");
    }
}
