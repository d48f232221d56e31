//! Explicit reference governor steered by a barrier-constrained navigation QP.
//!
//! The governor state `g` evolves as `ġ = Δ(x, g)·u_g`, where `Δ` is the
//! dynamic safety margin of the tracking loop and `u_g` solves a small QP
//! whose rows keep `g` clear of obstacles and inside the STL barrier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, solve_linear, Matrix};
use crate::qp::{QpProblem, QpSolution, QpSolver, QpStatus};
use crate::stl::{BarrierEval, TimeVaryingBarrier};
use crate::world::Environment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GovernorConfig {
    /// Diagonal of the navigation weight `H`; empty means identity.
    pub h_diag: Vec<f64>,
    /// Scalar distance weight; `Q_dist = q_dist·I` must be negative definite.
    pub q_dist: f64,
    pub kappa_obs: f64,
    pub kappa_stl: f64,
    /// Box bound `|u_g,i| ≤ u_max`.
    pub u_max: f64,
    /// Lower clamp on a positive margin.
    pub delta_floor: f64,
    /// Upper clamp on the applied margin. Bounds the governor's step length
    /// where the unsafe set is far away.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_max: Option<f64>,
}

impl Default for GovernorConfig {
    fn default() -> Self {
        Self {
            h_diag: Vec::new(),
            q_dist: -0.1,
            kappa_obs: 1.0,
            kappa_stl: 1.0,
            u_max: 1.0,
            delta_floor: 0.0,
            delta_max: None,
        }
    }
}

impl GovernorConfig {
    pub fn validate(&self, dimension: usize) -> Result<()> {
        if !self.h_diag.is_empty() {
            if self.h_diag.len() != dimension {
                return Err(Error::Config(format!(
                    "governor.h_diag has {} entries, expected {dimension}",
                    self.h_diag.len()
                )));
            }
            if self.h_diag.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
                return Err(Error::Config("governor.h_diag entries must be positive".into()));
            }
        }
        if !(self.q_dist < 0.0 && self.q_dist.is_finite()) {
            return Err(Error::Config(format!(
                "governor.q_dist must be negative, got {}",
                self.q_dist
            )));
        }
        for (name, v) in [("kappa_obs", self.kappa_obs), ("kappa_stl", self.kappa_stl), ("u_max", self.u_max)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("governor.{name} must be positive, got {v}")));
            }
        }
        if !(self.delta_floor >= 0.0 && self.delta_floor.is_finite()) {
            return Err(Error::Config(format!(
                "governor.delta_floor must be nonnegative, got {}",
                self.delta_floor
            )));
        }
        if let Some(cap) = self.delta_max {
            if !(cap > 0.0 && cap >= self.delta_floor && cap.is_finite()) {
                return Err(Error::Config(format!(
                    "governor.delta_max must be positive and at least delta_floor, got {cap}"
                )));
            }
        }
        Ok(())
    }

    pub fn hessian(&self, dimension: usize) -> Matrix {
        if self.h_diag.is_empty() {
            Matrix::identity(dimension)
        } else {
            Matrix::from_diag(&self.h_diag)
        }
    }

    /// Margin actually applied to the governor: zero for `Δ ≤ 0`,
    /// otherwise clamped to `[delta_floor, delta_max]`.
    pub fn effective_delta(&self, delta: f64) -> f64 {
        if delta > 0.0 {
            delta.max(self.delta_floor).min(self.delta_max.unwrap_or(f64::INFINITY))
        } else {
            0.0
        }
    }
}

/// Diagnostics of one governor update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub u_g: Vec<f64>,
    pub delta_eff: f64,
    pub status: StepStatus,
    pub slack: f64,
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub barrier: Option<f64>,
    pub concave_dropped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Optimal,
    /// Solved after relaxing the STL row.
    Relaxed,
    /// `Δ = 0` with an unsatisfiable row; the governor holds still.
    Frozen,
}

impl StepStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepStatus::Optimal => "optimal",
            StepStatus::Relaxed => "relaxed",
            StepStatus::Frozen => "frozen",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GovernorState {
    pub g: Vec<f64>,
    /// Margin computed from the plant state paired with `g` at the last update.
    pub dsm: f64,
    pub t: f64,
    pub last: Option<StepDiagnostics>,
}

impl GovernorState {
    pub fn new(g: Vec<f64>) -> Self {
        Self {
            g,
            dsm: f64::NAN,
            t: 0.0,
            last: None,
        }
    }
}

/// Equilibrium state for reference `g`: positions at `g`, derivatives zero.
pub fn equilibrium(g: &[f64], n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    x[..g.len()].copy_from_slice(g);
    x
}

/// `Δ = sign(d)·d² − l²·(x − x̄)ᵀP(x − x̄)` with `d = d_s(g, O)`.
pub fn dsm(x: &[f64], g: &[f64], p: &Matrix, l: f64, env: &Environment) -> f64 {
    // Only the leading position/velocity block enters the certificate.
    let x = &x[..p.rows().min(x.len())];
    let xbar = equilibrium(g, x.len());
    let e: Vec<f64> = x.iter().zip(&xbar).map(|(a, b)| a - b).collect();
    let d = env.distance_to_unsafe(g);
    d.signum() * d * d - l * l * p.quad_form(&e)
}

/// Navigation QP and the bookkeeping needed to relax it.
#[derive(Debug, Clone, PartialEq)]
pub struct NavigationQp {
    pub problem: QpProblem,
    pub obstacle_rows: Vec<usize>,
    pub stl_rows: Vec<usize>,
    pub barrier: Option<BarrierEval>,
    /// The distance term's quadratic part would make the Hessian indefinite
    /// and was left out.
    pub concave_dropped: bool,
}

/// Builds the QP over `u_g` at `(g, t)` for margin `delta`.
pub fn assemble_navigation_qp(
    g: &[f64],
    t: f64,
    delta: f64,
    env: &Environment,
    barrier: Option<&TimeVaryingBarrier>,
    cfg: &GovernorConfig,
    dt: f64,
) -> Result<NavigationQp> {
    let p = g.len();
    let h = cfg.hessian(p);
    let mut hessian = h.scale(2.0);
    let mut linear = vec![0.0; p];
    let mut concave_dropped = false;

    let d0 = env.distance_to_unsafe(g);
    if d0.is_finite() && delta > 0.0 {
        // One-step lookahead d(g + dt·Δ·u) ≈ d0 + cᵀu, substituted into q·d².
        let grad = env.unsafe_gradient(g)?;
        let c: Vec<f64> = grad.iter().map(|v| dt * delta * v).collect();
        let q = -cfg.q_dist;
        let hinv_c = solve_linear(&h, &c)?;
        if q * dot(&c, &hinv_c) < 1.0 {
            for i in 0..p {
                for j in 0..p {
                    hessian[(i, j)] -= 2.0 * q * c[i] * c[j];
                }
            }
        } else {
            concave_dropped = true;
        }
        for (l, ci) in linear.iter_mut().zip(&c) {
            *l = -2.0 * q * d0 * ci;
        }
    }

    let mut problem = QpProblem::new(hessian, linear)
        .with_bounds(vec![-cfg.u_max; p], vec![cfg.u_max; p]);
    let mut obstacle_rows = Vec::new();
    for term in env.terms(g)? {
        let a: Vec<f64> = term.gradient.iter().map(|v| -delta * v).collect();
        obstacle_rows.push(problem.num_rows());
        problem.push_row(&a, cfg.kappa_obs * term.value);
    }
    let mut stl_rows = Vec::new();
    let eval = barrier.and_then(|b| b.evaluate(g, t));
    if let Some(e) = &eval {
        let a: Vec<f64> = e.gradient.iter().map(|v| -delta * v).collect();
        stl_rows.push(problem.num_rows());
        problem.push_row(&a, e.time_derivative + cfg.kappa_stl * e.value);
    }
    Ok(NavigationQp {
        problem,
        obstacle_rows,
        stl_rows,
        barrier: eval,
        concave_dropped,
    })
}

/// Re-solves with one slack `s ≥ 0` loosening every STL row. The slack pays
/// an exact (linear) penalty `10⁶·‖H‖_F·s`, plus a small quadratic term for
/// strict convexity, so a feasible problem keeps `s = 0`.
pub fn relax_and_resolve(problem: &QpProblem, stl_rows: &[usize]) -> Result<(QpSolution, f64)> {
    let p = problem.dim();
    let m = problem.num_rows();
    let h_norm = problem.hessian.frobenius_norm().max(1.0);
    let mut hessian = Matrix::zeros(p + 1, p + 1);
    hessian.set_block(0, 0, &problem.hessian);
    hessian[(p, p)] = h_norm;
    let mut linear = problem.linear.clone();
    linear.push(1e6 * h_norm);
    let mut lower = problem.lower.clone();
    lower.push(0.0);
    let mut upper = problem.upper.clone();
    upper.push(f64::INFINITY);
    let mut relaxed = QpProblem::new(hessian, linear).with_bounds(lower, upper);
    for i in 0..m {
        let mut row = problem.ineq.row(i).to_vec();
        row.push(if stl_rows.contains(&i) { -1.0 } else { 0.0 });
        relaxed.push_row(&row, problem.ineq_rhs[i]);
    }
    let sol = crate::qp::solve(&relaxed)?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::QpInfeasible(format!(
            "relaxed problem status {}; obstacle rows are inconsistent",
            sol.status.as_str()
        )));
    }
    let slack = sol.u[p].max(0.0);
    // Drop the slack column and its bound multipliers.
    let mut duals = sol.duals[..m].to_vec();
    duals.extend_from_slice(&sol.duals[m..m + p]);
    duals.extend_from_slice(&sol.duals[m + p + 1..m + 2 * p + 1]);
    let active_set = sol
        .active_set
        .iter()
        .filter_map(|&i| match i {
            _ if i < m + p => Some(i),
            _ if i > m + p && i < m + 2 * p + 1 => Some(i - 1),
            _ => None,
        })
        .collect();
    Ok((
        QpSolution {
            u: sol.u[..p].to_vec(),
            status: QpStatus::Optimal,
            kkt_residual: sol.kkt_residual,
            active_set,
            duals,
            iterations: sol.iterations,
        },
        slack,
    ))
}

/// Explicit Euler step of `ġ = Δ·u_g`.
pub fn advance(g: &[f64], u: &[f64], delta_eff: f64, dt: f64) -> Vec<f64> {
    g.iter().zip(u).map(|(gi, ui)| gi + dt * delta_eff * ui).collect()
}

/// Inputs shared by every governor update within one run.
#[derive(Debug, Clone, Copy)]
pub struct GovernorContext<'a> {
    pub p: &'a Matrix,
    pub l: f64,
    pub env: &'a Environment,
    pub barrier: Option<&'a TimeVaryingBarrier>,
    pub cfg: &'a GovernorConfig,
    pub dt: f64,
}

/// One explicit-Euler governor update `g' = g + dt·Δ_eff·u_g` against plant state `x`.
pub fn governor_step(
    state: &GovernorState,
    x: &[f64],
    ctx: &GovernorContext<'_>,
    solver: &mut QpSolver,
) -> Result<GovernorState> {
    let delta = dsm(x, &state.g, ctx.p, ctx.l, ctx.env);
    if !delta.is_finite() {
        return Err(Error::Numerical(format!(
            "safety margin is {delta} at g = {:?}, x = {x:?}",
            state.g
        )));
    }
    let delta_eff = ctx.cfg.effective_delta(delta);
    let nav = assemble_navigation_qp(
        &state.g,
        state.t,
        delta_eff,
        ctx.env,
        ctx.barrier,
        ctx.cfg,
        ctx.dt,
    )?;
    let first = solver.solve(&nav.problem)?;
    let (sol, slack, status) = if first.status == QpStatus::Optimal {
        (first, 0.0, StepStatus::Optimal)
    } else {
        match relax_and_resolve(&nav.problem, &nav.stl_rows) {
            Ok((sol, slack)) => {
                solver.reset();
                (sol, slack, StepStatus::Relaxed)
            }
            Err(_) if delta_eff == 0.0 => {
                solver.reset();
                let p = state.g.len();
                let frozen = QpSolution {
                    u: vec![0.0; p],
                    status: QpStatus::Infeasible,
                    kkt_residual: f64::NAN,
                    active_set: Vec::new(),
                    duals: vec![0.0; nav.problem.num_rows() + 2 * p],
                    iterations: first.iterations,
                };
                (frozen, f64::NAN, StepStatus::Frozen)
            }
            Err(e) => {
                return Err(Error::QpInfeasible(format!(
                    "{e}; t = {}, g = {:?}, x = {x:?}, Δ = {delta}, barrier = {:?}",
                    state.t, state.g, nav.barrier
                )))
            }
        }
    };
    let g = advance(&state.g, &sol.u, delta_eff, ctx.dt);
    Ok(GovernorState {
        g,
        dsm: delta,
        t: state.t + ctx.dt,
        last: Some(StepDiagnostics {
            u_g: sol.u,
            delta_eff,
            status,
            slack,
            active_set: sol.active_set,
            iterations: sol.iterations,
            barrier: nav.barrier.map(|b| b.value),
            concave_dropped: nav.concave_dropped,
        }),
    })
}
