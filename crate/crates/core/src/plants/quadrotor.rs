//! Rigid-body quadrotor with a geometric tracking controller on SE(3).
//!
//! Inertial frame with `e3` pointing down (gravity along `+e3`); thrust acts
//! along `−R·e3`. The flattened state is `[x(3), v(3), R(9, row-major), Ω(3)]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const STATE_DIM: usize = 18;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadrotorParams {
    pub mass_kg: f64,
    /// Diagonal of the body inertia.
    pub inertia_kgm2: [f64; 3],
    pub gravity_mps2: f64,
    pub arm_m: f64,
    pub k_x: f64,
    pub k_v: f64,
    pub k_r: f64,
    pub k_omega: f64,
    /// Yaw angle of the first body axis, in radians.
    pub heading_rad: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            mass_kg: 1.0,
            inertia_kgm2: [0.02, 0.02, 0.04],
            gravity_mps2: 9.81,
            arm_m: 0.2,
            k_x: 8.0,
            k_v: 4.0,
            k_r: 2.0,
            k_omega: 0.4,
            heading_rad: 0.0,
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass_kg", self.mass_kg),
            ("gravity_mps2", self.gravity_mps2),
            ("arm_m", self.arm_m),
            ("k_x", self.k_x),
            ("k_v", self.k_v),
            ("k_r", self.k_r),
            ("k_omega", self.k_omega),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("quadrotor.{name} must be positive, got {v}")));
            }
        }
        if self.inertia_kgm2.iter().any(|j| !(*j > 0.0 && j.is_finite())) {
            return Err(Error::Config("quadrotor.inertia_kgm2 entries must be positive".into()));
        }
        Ok(())
    }

    /// Translational gains of the linearized hover loop, in `u = k_p·e + k_d·ė` form.
    pub fn translational_gains(&self) -> (f64, f64) {
        (-self.k_x / self.mass_kg, -self.k_v / self.mass_kg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadrotorState {
    pub x: Vec3,
    pub v: Vec3,
    pub r: Mat3,
    pub omega: Vec3,
}

impl QuadrotorState {
    pub fn hover_at(x: Vec3) -> Self {
        Self {
            x,
            v: [0.0; 3],
            r: IDENTITY,
            omega: [0.0; 3],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(STATE_DIM);
        s.extend_from_slice(&self.x);
        s.extend_from_slice(&self.v);
        for row in &self.r {
            s.extend_from_slice(row);
        }
        s.extend_from_slice(&self.omega);
        s
    }

    pub fn from_slice(s: &[f64]) -> Self {
        let v3 = |o: usize| [s[o], s[o + 1], s[o + 2]];
        Self {
            x: v3(0),
            v: v3(3),
            r: [v3(6), v3(9), v3(12)],
            omega: v3(15),
        }
    }

    /// `‖RᵀR − I‖_F`.
    pub fn orthonormality_error(&self) -> f64 {
        let rtr = mat_mul(&transpose(&self.r), &self.r);
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = rtr[i][j] - if i == j { 1.0 } else { 0.0 };
                acc += d * d;
            }
        }
        acc.sqrt()
    }
}

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot3(m[0], v), dot3(m[1], v), dot3(m[2], v)]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

fn hat(w: Vec3) -> Mat3 {
    [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
}

/// Inverse of `hat` applied to the skew part of `m`.
fn vee_skew(m: &Mat3) -> Vec3 {
    [
        0.5 * (m[2][1] - m[1][2]),
        0.5 * (m[0][2] - m[2][0]),
        0.5 * (m[1][0] - m[0][1]),
    ]
}

fn from_columns(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
    [[c0[0], c1[0], c2[0]], [c0[1], c1[1], c2[1]], [c0[2], c1[2], c2[2]]]
}

/// Nearest rotation by Gram–Schmidt on the columns.
pub fn reorthonormalize(r: &Mat3) -> Mat3 {
    let col = |j: usize| [r[0][j], r[1][j], r[2][j]];
    let c0 = col(0);
    let b0 = scale(c0, 1.0 / norm3(c0));
    let c1 = sub(col(1), scale(b0, dot3(b0, col(1))));
    let b1 = scale(c1, 1.0 / norm3(c1));
    let b2 = cross(b0, b1);
    from_columns(b0, b1, b2)
}

/// Right-hand side of the rigid-body equations for input `[f, M(3)]`.
pub fn quad_dynamics(s: &[f64], input: &[f64], params: &QuadrotorParams) -> Vec<f64> {
    let st = QuadrotorState::from_slice(s);
    let (f, m) = (input[0], [input[1], input[2], input[3]]);
    let re3 = [st.r[0][2], st.r[1][2], st.r[2][2]];
    let acc = sub(
        [0.0, 0.0, params.gravity_mps2],
        scale(re3, f / params.mass_kg),
    );
    let rdot = mat_mul(&st.r, &hat(st.omega));
    let j = params.inertia_kgm2;
    let jw = [j[0] * st.omega[0], j[1] * st.omega[1], j[2] * st.omega[2]];
    let torque = sub(m, cross(st.omega, jw));
    let wdot = [torque[0] / j[0], torque[1] / j[1], torque[2] / j[2]];
    let mut out = Vec::with_capacity(STATE_DIM);
    out.extend_from_slice(&st.v);
    out.extend_from_slice(&acc);
    for row in &rdot {
        out.extend_from_slice(row);
    }
    out.extend_from_slice(&wdot);
    out
}

/// Desired rotation from the commanded force `A` and heading: third axis
/// along `−A`, first axis as close to the heading as the third allows.
fn desired_rotation(a: Vec3, heading: f64) -> Result<Mat3> {
    let na = norm3(a);
    if !(na > 1e-9) {
        return Err(Error::Controller(format!(
            "thrust direction undefined: commanded force {a:?} vanishes"
        )));
    }
    let b3 = scale(a, -1.0 / na);
    let h = [heading.cos(), heading.sin(), 0.0];
    let c = cross(b3, h);
    let nc = norm3(c);
    if !(nc > 1e-9) {
        return Err(Error::Controller(format!(
            "heading {heading} is parallel to the thrust axis {b3:?}"
        )));
    }
    let b2 = scale(c, 1.0 / nc);
    let b1 = cross(b2, b3);
    Ok(from_columns(b1, b2, b3))
}

/// Stateless controller law given the desired attitude rates.
#[allow(clippy::too_many_arguments)]
pub fn quad_geometric_controller(
    s: &QuadrotorState,
    x_d: Vec3,
    xdot_d: Vec3,
    xddot_d: Vec3,
    heading: f64,
    omega_d: Vec3,
    omega_dot_d: Vec3,
    params: &QuadrotorParams,
) -> Result<(f64, Vec3, Mat3)> {
    let m = params.mass_kg;
    let e_x = sub(s.x, x_d);
    let e_v = sub(s.v, xdot_d);
    let a = add(
        add(scale(e_x, -params.k_x), scale(e_v, -params.k_v)),
        add([0.0, 0.0, -m * params.gravity_mps2], scale(xddot_d, m)),
    );
    let r_d = desired_rotation(a, heading)?;
    let re3 = [s.r[0][2], s.r[1][2], s.r[2][2]];
    let f = -dot3(a, re3);

    let rdt_r = mat_mul(&transpose(&r_d), &s.r);
    let rt_rd = transpose(&rdt_r);
    // e_R = vee(½(R_dᵀR − RᵀR_d)).
    let e_r = vee_skew(&rdt_r);
    let w_ref = mat_vec(&rt_rd, omega_d);
    let e_w = sub(s.omega, w_ref);
    let j = params.inertia_kgm2;
    let jw = [j[0] * s.omega[0], j[1] * s.omega[1], j[2] * s.omega[2]];
    let ff = sub(
        mat_vec(&mat_mul(&hat(s.omega), &rt_rd), omega_d),
        mat_vec(&rt_rd, omega_dot_d),
    );
    let j_ff = [j[0] * ff[0], j[1] * ff[1], j[2] * ff[2]];
    let moment = sub(
        add(
            add(scale(e_r, -params.k_r), scale(e_w, -params.k_omega)),
            cross(s.omega, jw),
        ),
        j_ff,
    );
    Ok((f, moment, r_d))
}

/// Geometric controller regulating to a set point. The reference is taken
/// as an equilibrium (`ẋ_d = ẍ_d = 0`), matching `x̄_g` in the certificate;
/// attitude rates come from differencing the desired rotation.
#[derive(Debug, Clone)]
pub struct QuadController {
    pub params: QuadrotorParams,
    dt: f64,
    prev_rd: Option<Mat3>,
    prev_omega_d: Vec3,
}

impl QuadController {
    pub fn new(params: QuadrotorParams, dt: f64) -> Self {
        Self {
            params,
            dt,
            prev_rd: None,
            prev_omega_d: [0.0; 3],
        }
    }

    /// Returns `[f, M(3)]` for reference position `x_d`.
    pub fn control(&mut self, s: &QuadrotorState, x_d: Vec3) -> Result<Vec<f64>> {
        let zero = [0.0; 3];
        let heading = self.params.heading_rad;
        // The desired rotation depends only on the translational errors, so
        // it is known before the rates are.
        let (_, _, r_d) = quad_geometric_controller(s, x_d, zero, zero, heading, zero, zero, &self.params)?;
        let omega_d = match self.prev_rd {
            Some(prev) => scale(vee_skew(&mat_mul(&transpose(&prev), &r_d)), 1.0 / self.dt),
            None => zero,
        };
        let omega_dot_d = if self.prev_rd.is_some() {
            scale(sub(omega_d, self.prev_omega_d), 1.0 / self.dt)
        } else {
            zero
        };
        let (f, m, _) =
            quad_geometric_controller(s, x_d, zero, zero, heading, omega_d, omega_dot_d, &self.params)?;
        self.prev_omega_d = omega_d;
        self.prev_rd = Some(r_d);
        Ok(vec![f, m[0], m[1], m[2]])
    }
}

/// Translational closed loop `[e, ė]` under perfect attitude tracking.
pub fn linearized_translational_loop(params: &QuadrotorParams) -> Matrix {
    let (kp, kd) = params.translational_gains();
    super::di_closed_loop(super::DoubleIntegratorGains { kp, kd }, 3)
}

/// Projects the attitude block back onto SO(3).
pub fn renormalize_state(s: &mut [f64]) {
    let mut st = QuadrotorState::from_slice(s);
    st.r = reorthonormalize(&st.r);
    s.copy_from_slice(&st.to_vec());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::rk4_step;
    use approx::assert_relative_eq;

    #[test]
    fn hover_thrust_balances_gravity() {
        let p = QuadrotorParams::default();
        let s = QuadrotorState::hover_at([1.0, 2.0, -3.0]);
        let (f, m, _) =
            quad_geometric_controller(&s, s.x, [0.0; 3], [0.0; 3], 0.0, [0.0; 3], [0.0; 3], &p)
                .unwrap();
        assert_relative_eq!(f, p.mass_kg * p.gravity_mps2, epsilon = 1e-12);
        for mi in m {
            assert!(mi.abs() < 1e-12);
        }
    }

    #[test]
    fn vertical_offset_adds_k_x() {
        let p = QuadrotorParams::default();
        // e_x = (0, 0, 1): the vehicle sits 1 m below the reference (e3 down).
        let s = QuadrotorState::hover_at([0.0, 0.0, 1.0]);
        let (f, m, _) = quad_geometric_controller(
            &s,
            [0.0, 0.0, 0.0],
            [0.0; 3],
            [0.0; 3],
            0.0,
            [0.0; 3],
            [0.0; 3],
            &p,
        )
        .unwrap();
        assert_relative_eq!(f, p.mass_kg * p.gravity_mps2 + p.k_x, epsilon = 1e-12);
        for mi in m {
            assert!(mi.abs() < 1e-12);
        }
    }

    #[test]
    fn free_fall_reference_is_degenerate() {
        let p = QuadrotorParams::default();
        let s = QuadrotorState::hover_at([0.0; 3]);
        let res = quad_geometric_controller(
            &s,
            [0.0; 3],
            [0.0; 3],
            [0.0, 0.0, p.gravity_mps2],
            0.0,
            [0.0; 3],
            [0.0; 3],
            &p,
        );
        assert!(matches!(res, Err(Error::Controller(_))));
    }

    #[test]
    fn attitude_error_is_vee_of_skew_part() {
        // Small yaw offset: R = Rz(θ), R_d = I → e_R ≈ (0, 0, sin θ).
        let th: f64 = 0.1;
        let r = [[th.cos(), -th.sin(), 0.0], [th.sin(), th.cos(), 0.0], [0.0, 0.0, 1.0]];
        let s = QuadrotorState {
            x: [0.0; 3],
            v: [0.0; 3],
            r,
            omega: [0.0; 3],
        };
        let p = QuadrotorParams::default();
        let (_, m, _) =
            quad_geometric_controller(&s, [0.0; 3], [0.0; 3], [0.0; 3], 0.0, [0.0; 3], [0.0; 3], &p)
                .unwrap();
        assert_relative_eq!(m[2], -p.k_r * th.sin(), epsilon = 1e-12);
    }

    #[test]
    fn step_in_plane_converges() {
        let p = QuadrotorParams::default();
        let dt = 0.01;
        let mut ctl = QuadController::new(p.clone(), dt);
        let mut s = QuadrotorState::hover_at([0.0, 0.0, -2.0]).to_vec();
        let target = [1.0, -1.0, -2.0];
        let mut worst_orth: f64 = 0.0;
        for _ in 0..1000 {
            let st = QuadrotorState::from_slice(&s);
            let u = ctl.control(&st, target).unwrap();
            s = rk4_step(|x, u| quad_dynamics(x, u, &p), &s, &u, dt).unwrap();
            renormalize_state(&mut s);
            worst_orth = worst_orth.max(QuadrotorState::from_slice(&s).orthonormality_error());
        }
        let st = QuadrotorState::from_slice(&s);
        let err = norm3(sub(st.x, target));
        assert!(err < 0.05 * 2f64.sqrt(), "{err}");
        assert!(worst_orth < 1e-12);
    }

    #[test]
    fn reorthonormalize_fixes_drift() {
        let mut r = IDENTITY;
        r[0][1] = 1e-3;
        r[2][2] = 1.0 + 1e-3;
        let q = reorthonormalize(&r);
        let st = QuadrotorState {
            x: [0.0; 3],
            v: [0.0; 3],
            r: q,
            omega: [0.0; 3],
        };
        assert!(st.orthonormality_error() < 1e-14);
    }
}
