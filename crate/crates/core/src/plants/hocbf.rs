//! Second-order exponential CBF filter on the double integrator, used as
//! the comparison baseline.

use serde::{Deserialize, Serialize};

use super::{di_controller, DoubleIntegratorGains};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::qp::{self, QpProblem, QpStatus};
use crate::world::Environment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HocbfConfig {
    pub kappa1: f64,
    pub kappa2: f64,
    /// Per-axis acceleration bound.
    pub accel_max_mps2: f64,
}

impl Default for HocbfConfig {
    fn default() -> Self {
        Self {
            kappa1: 1.0,
            kappa2: 1.0,
            accel_max_mps2: 10.0,
        }
    }
}

impl HocbfConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("accel_max_mps2", self.accel_max_mps2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("hocbf.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HocbfOutput {
    pub u: Vec<f64>,
    pub nominal: Vec<f64>,
    /// The filter QP had no solution and zero input was applied.
    pub infeasible: bool,
}

/// `min ‖u − u_nom‖²` subject to `b̈ + (κ₁+κ₂)ḃ + κ₁κ₂·b ≥ 0` for every
/// obstacle (`b = ‖x−o‖² − r²`) and the arena (`b = R² − ‖x−c‖²`).
pub fn hocbf_controller(
    s: &[f64],
    target: &[f64],
    env: &Environment,
    gains: DoubleIntegratorGains,
    cfg: &HocbfConfig,
) -> Result<HocbfOutput> {
    let d = target.len();
    let (x, v) = (&s[..d], &s[d..2 * d]);
    let nominal = di_controller(s, target, gains);
    let k_sum = cfg.kappa1 + cfg.kappa2;
    let k_prod = cfg.kappa1 * cfg.kappa2;
    let vv = dot(v, v);

    let linear: Vec<f64> = nominal.iter().map(|u| -2.0 * u).collect();
    let mut problem = QpProblem::new(Matrix::identity(d).scale(2.0), linear).with_bounds(
        vec![-cfg.accel_max_mps2; d],
        vec![cfg.accel_max_mps2; d],
    );
    for ob in &env.obstacles {
        let r: Vec<f64> = x.iter().zip(&ob.center_m).map(|(a, b)| a - b).collect();
        let b = dot(&r, &r) - ob.radius_m * ob.radius_m;
        // b̈ = 2‖v‖² + 2rᵀu, ḃ = 2rᵀv.
        let a: Vec<f64> = r.iter().map(|ri| -2.0 * ri).collect();
        problem.push_row(&a, 2.0 * vv + k_sum * 2.0 * dot(&r, v) + k_prod * b);
    }
    if let Some(arena) = &env.arena {
        let r: Vec<f64> = x.iter().zip(&arena.center_m).map(|(a, b)| a - b).collect();
        let b = arena.radius_m * arena.radius_m - dot(&r, &r);
        // b̈ = −2‖v‖² − 2rᵀu, ḃ = −2rᵀv.
        let a: Vec<f64> = r.iter().map(|ri| 2.0 * ri).collect();
        problem.push_row(&a, -2.0 * vv - k_sum * 2.0 * dot(&r, v) + k_prod * b);
    }
    let sol = qp::solve(&problem)?;
    Ok(if sol.status == QpStatus::Optimal {
        HocbfOutput {
            u: sol.u,
            nominal,
            infeasible: false,
        }
    } else {
        HocbfOutput {
            u: vec![0.0; d],
            nominal,
            infeasible: true,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Ball;
    use approx::assert_relative_eq;

    const GAINS: DoubleIntegratorGains = DoubleIntegratorGains { kp: -6.0, kd: -4.0 };

    #[test]
    fn free_space_passes_nominal() {
        let env = Environment::new(2, vec![Ball::new([50.0, 50.0], 1.0)], None).unwrap();
        let s = [0.0, 0.0, 0.1, 0.0];
        let out = hocbf_controller(&s, &[1.0, 0.5], &env, GAINS, &HocbfConfig::default()).unwrap();
        assert!(!out.infeasible);
        for i in 0..2 {
            assert_relative_eq!(out.u[i], out.nominal[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn head_on_approach_brakes() {
        let env = Environment::new(2, vec![Ball::new([2.0, 0.0], 1.0)], None).unwrap();
        // Moving at 3 m/s toward an obstacle 1 m away.
        let s = [0.0, 0.0, 3.0, 0.0];
        let out = hocbf_controller(&s, &[10.0, 0.0], &env, GAINS, &HocbfConfig::default()).unwrap();
        assert!(!out.infeasible);
        assert!(out.u[0] < 0.0, "{:?}", out.u);
        assert!(out.u[0] < out.nominal[0]);
    }

    #[test]
    fn infeasible_gives_zero_input() {
        let env = Environment::new(2, vec![Ball::new([2.0, 0.0], 1.0)], None).unwrap();
        let cfg = HocbfConfig {
            accel_max_mps2: 0.1,
            ..Default::default()
        };
        let s = [0.0, 0.0, 3.0, 0.0];
        let out = hocbf_controller(&s, &[10.0, 0.0], &env, GAINS, &cfg).unwrap();
        assert!(out.infeasible);
        assert_eq!(out.u, vec![0.0, 0.0]);
    }
}
