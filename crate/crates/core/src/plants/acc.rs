//! Adaptive cruise control: ego speed `v_e`, gap `d` to a lead car at `v₀`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccFixture {
    pub lead_speed_mps: f64,
    /// Minimum gap `d_δ`.
    pub standoff_m: f64,
    pub ego_speed_mps: f64,
    pub gap_m: f64,
}

impl AccFixture {
    pub fn validate(&self) -> Result<()> {
        if !(self.standoff_m > 0.0) {
            return Err(Error::Config(format!(
                "acc.standoff_m must be positive, got {}",
                self.standoff_m
            )));
        }
        if !(self.gap_m > self.standoff_m) {
            return Err(Error::Config("acc.gap_m must exceed acc.standoff_m".into()));
        }
        Ok(())
    }
}

/// `(v̇_e, ḋ) = (u, v₀ − v_e)`.
pub fn acc_plant(v_e: f64, _d: f64, v0: f64, u: f64) -> (f64, f64) {
    (u, v0 - v_e)
}

/// Coefficients of `u` in the first and second time derivatives of
/// `b = d − d_δ` at `(v_e, d)`, by central differences on the plant.
pub fn lie_input_coefficients(fixture: &AccFixture) -> (f64, f64) {
    let v0 = fixture.lead_speed_mps;
    let standoff = fixture.standoff_m;
    let b = |_v: f64, d: f64| d - standoff;
    let h = 1e-4;
    let grad = |f: &dyn Fn(f64, f64) -> f64, v: f64, d: f64| {
        (
            (f(v + h, d) - f(v - h, d)) / (2.0 * h),
            (f(v, d + h) - f(v, d - h)) / (2.0 * h),
        )
    };
    // ḃ(x, u) = ∇b · F(x, u)
    let bdot = |v: f64, d: f64, u: f64| {
        let (bv, bd) = grad(&b, v, d);
        let (fv, fd) = acc_plant(v, d, v0, u);
        bv * fv + bd * fd
    };
    let (v, d) = (fixture.ego_speed_mps, fixture.gap_m);
    let first = (bdot(v, d, 1.0) - bdot(v, d, -1.0)) / 2.0;
    // b̈ = ∇(L_f b) · F(x, u), with L_f b = ḃ at u = 0.
    let lf = |v: f64, d: f64| bdot(v, d, 0.0);
    let bddot = |u: f64| {
        let (gv, gd) = grad(&lf, v, d);
        let (fv, fd) = acc_plant(v, d, v0, u);
        gv * fv + gd * fd
    };
    let second = (bddot(1.0) - bddot(-1.0)) / 2.0;
    (first, second)
}
