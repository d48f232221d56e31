//! Tracked plants, their stabilizing controllers and the fixed-step integrator.

pub mod acc;
pub mod double_integrator;
pub mod hocbf;
pub mod quadrotor;

use crate::error::{Error, Result};
use crate::linalg::{is_hurwitz, output_gain, solve_lyapunov, Matrix};

pub use acc::{acc_plant, lie_input_coefficients, AccFixture};
pub use double_integrator::{
    di_closed_loop, di_controller, di_dynamics, DoubleIntegratorGains, DoubleIntegratorState,
};
pub use hocbf::{hocbf_controller, HocbfConfig, HocbfOutput};
pub use quadrotor::{
    quad_dynamics, quad_geometric_controller, QuadController, QuadrotorParams, QuadrotorState,
};

/// Classical fourth-order Runge–Kutta step with `u` held over the step.
pub fn rk4_step<F>(f: F, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("step must be positive, got {dt}")));
    }
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect() };
    let k1 = f(x, u);
    let k2 = f(&axpy(0.5 * dt, &k1), u);
    let k3 = f(&axpy(0.5 * dt, &k2), u);
    let k4 = f(&axpy(dt, &k3), u);
    let out: Vec<f64> = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite state after integration step; state before = {x:?}, input = {u:?}"
        )));
    }
    Ok(out)
}

/// Quadratic tracking certificate `V = eᵀPe` of a stable linear loop and
/// the output gain `l` with `‖Ce‖ ≤ l·‖e‖_P`.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub p: Matrix,
    pub l: f64,
}

impl Certificate {
    pub fn new(acl: &Matrix, c: &Matrix) -> Result<Self> {
        if !is_hurwitz(acl)? {
            return Err(Error::Config("closed-loop matrix is not Hurwitz".into()));
        }
        let p = solve_lyapunov(acl, &Matrix::identity(acl.rows()))?;
        let l = output_gain(&p, c)?;
        Ok(Self { p, l })
    }

    /// `V(x, x̄_g)` on the first `p.rows()` state entries.
    pub fn lyapunov(&self, x: &[f64], g: &[f64]) -> f64 {
        let n = self.p.rows();
        let mut e = x[..n].to_vec();
        for (ei, gi) in e.iter_mut().zip(g) {
            *ei -= gi;
        }
        self.p.quad_form(&e)
    }
}

/// `C = [I 0]` selecting positions from a position/velocity state.
pub fn position_output(dim: usize) -> Matrix {
    let mut c = Matrix::zeros(dim, 2 * dim);
    for i in 0..dim {
        c[(i, i)] = 1.0;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rk4_constant_state() {
        let x = rk4_step(|_, _| vec![0.0, 0.0], &[1.0, -2.0], &[], 0.1).unwrap();
        assert_eq!(x, vec![1.0, -2.0]);
    }

    #[test]
    fn rk4_exponential_decay() {
        let dt = 0.01;
        let x = rk4_step(|x, _| vec![-x[0]], &[1.0], &[], dt).unwrap();
        assert!((x[0] - (-dt).exp()).abs() < 1e-10);
    }

    #[test]
    fn rk4_exact_on_double_integrator() {
        let (x0, v0, u, dt) = (0.3, -1.2, 2.5, 0.05);
        let x = rk4_step(|s, u| vec![s[1], u[0]], &[x0, v0], &[u], dt).unwrap();
        assert_relative_eq!(x[0], x0 + v0 * dt + 0.5 * u * dt * dt, epsilon = 1e-12);
        assert_relative_eq!(x[1], v0 + u * dt, epsilon = 1e-12);
    }

    #[test]
    fn rk4_order() {
        // Logistic growth from 0.1 over 5 s.
        let exact = |t: f64| 1.0 / (1.0 + 9.0 * (-t).exp());
        let run = |dt: f64| {
            let mut x = vec![0.1];
            let n = (5.0 / dt).round() as usize;
            for _ in 0..n {
                x = rk4_step(|x, _| vec![x[0] * (1.0 - x[0])], &x, &[], dt).unwrap();
            }
            (x[0] - exact(5.0)).abs()
        };
        let e1 = run(0.5);
        let e2 = run(0.25);
        assert!((e1 / e2).log2() > 3.9, "{e1} {e2}");
    }

    #[test]
    fn rk4_flags_blowup() {
        assert!(matches!(
            rk4_step(|_, _| vec![f64::INFINITY], &[0.0], &[], 0.1),
            Err(Error::Numerical(_))
        ));
    }
}
