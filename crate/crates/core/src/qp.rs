//! Small dense convex QP solver.
//!
//! ```text
//!     minimize    ½ uᵀ H u + fᵀ u
//!     subject to  G u ≤ h,  lower ≤ u ≤ upper
//! ```
//!
//! Primal active-set method. A feasible start comes from the previous
//! solution (warm start), the box-projected origin, or a phase-1 problem
//! that minimizes the worst constraint violation. Box bounds are treated as
//! extra rows: index `m + j` is `u_j ≤ upper_j` and `m + p + j` is
//! `−u_j ≤ −lower_j`.

use crate::error::{Error, Result};
use crate::linalg::{cholesky, dot, norm, solve_linear, Matrix};

const TIKHONOV: f64 = 1e-9;
const MAX_PIVOTS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: Matrix,
    pub linear: Vec<f64>,
    pub ineq: Matrix,
    pub ineq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QpProblem {
    /// Unconstrained problem with infinite bounds.
    pub fn new(hessian: Matrix, linear: Vec<f64>) -> Self {
        let p = linear.len();
        Self {
            hessian,
            linear,
            ineq: Matrix::zeros(0, p),
            ineq_rhs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; p],
            upper: vec![f64::INFINITY; p],
        }
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    /// Appends the row `a·u ≤ b`.
    pub fn push_row(&mut self, a: &[f64], b: f64) {
        let p = self.dim();
        let mut data = self.ineq.as_slice().to_vec();
        data.extend_from_slice(a);
        self.ineq = Matrix::from_vec(self.ineq.rows() + 1, p, data).expect("row length");
        self.ineq_rhs.push(b);
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn num_rows(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        0.5 * self.hessian.quad_form(u) + dot(&self.linear, u)
    }

    fn validate(&self) -> Result<()> {
        let p = self.dim();
        if self.hessian.rows() != p || self.hessian.cols() != p {
            return Err(Error::Dimension(format!(
                "Hessian is {}x{}, expected {p}x{p}",
                self.hessian.rows(),
                self.hessian.cols()
            )));
        }
        if self.ineq.cols() != p || self.ineq.rows() != self.ineq_rhs.len() {
            return Err(Error::Dimension("inequality block has inconsistent shape".into()));
        }
        if self.lower.len() != p || self.upper.len() != p {
            return Err(Error::Dimension("bounds have the wrong length".into()));
        }
        if !self.hessian.is_symmetric(1e-10) {
            return Err(Error::Argument("Hessian must be symmetric".into()));
        }
        Ok(())
    }

    /// Rows `(a, b)` for all finite constraints, indexed as documented above.
    fn rows(&self) -> Vec<Option<(Vec<f64>, f64)>> {
        let p = self.dim();
        let m = self.num_rows();
        let mut out = Vec::with_capacity(m + 2 * p);
        for i in 0..m {
            out.push(Some((self.ineq.row(i).to_vec(), self.ineq_rhs[i])));
        }
        for j in 0..p {
            out.push(self.upper[j].is_finite().then(|| (unit(p, j, 1.0), self.upper[j])));
        }
        for j in 0..p {
            out.push(self.lower[j].is_finite().then(|| (unit(p, j, -1.0), -self.lower[j])));
        }
        out
    }
}

fn unit(p: usize, j: usize, s: f64) -> Vec<f64> {
    let mut v = vec![0.0; p];
    v[j] = s;
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: Vec<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub active_set: Vec<usize>,
    /// One multiplier per constraint row (general rows, then upper, then lower bounds).
    pub duals: Vec<f64>,
    pub iterations: usize,
}

/// Residuals of the KKT conditions at a candidate primal/dual pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_infeasibility)
            .max(self.dual_infeasibility)
            .max(self.complementarity)
    }
}

pub fn check_kkt(problem: &QpProblem, u: &[f64], duals: &[f64]) -> KktReport {
    let rows = problem.rows();
    let mut grad = problem.hessian.mul_vec(u);
    for (g, f) in grad.iter_mut().zip(&problem.linear) {
        *g += f;
    }
    let mut report = KktReport::default();
    for (i, row) in rows.iter().enumerate() {
        let lambda = duals.get(i).copied().unwrap_or(0.0);
        report.dual_infeasibility = report.dual_infeasibility.max(-lambda);
        match row {
            Some((a, b)) => {
                let slack = b - dot(a, u);
                report.primal_infeasibility = report.primal_infeasibility.max(-slack);
                report.complementarity = report.complementarity.max((lambda * slack).abs());
                for (g, ai) in grad.iter_mut().zip(a) {
                    *g += lambda * ai;
                }
            }
            None => {
                report.complementarity = report.complementarity.max(lambda.abs());
            }
        }
    }
    report.stationarity = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    report
}

/// Solves from a cold start.
pub fn solve(problem: &QpProblem) -> Result<QpSolution> {
    QpSolver::default().solve(problem)
}

/// Solver with a warm-start cache of the previous solution and active set.
/// One instance belongs to one simulation loop.
#[derive(Debug, Default, Clone)]
pub struct QpSolver {
    previous: Option<(Vec<f64>, Vec<usize>)>,
}

impl QpSolver {
    pub fn reset(&mut self) {
        self.previous = None;
    }

    pub fn solve(&mut self, problem: &QpProblem) -> Result<QpSolution> {
        problem.validate()?;
        let p = problem.dim();
        let rows = problem.rows();
        let hessian = regularized(&problem.hessian);
        let scale = 1.0
            + rows
                .iter()
                .flatten()
                .fold(0.0_f64, |m, (_, b)| m.max(b.abs()));
        let feas_tol = 1e-12 * scale;

        for (j, (lo, hi)) in problem.lower.iter().zip(&problem.upper).enumerate() {
            if lo > hi {
                return Ok(infeasible(p, rows.len(), &format!("empty box on coordinate {j}")));
            }
        }

        let warm = self.previous.as_ref().and_then(|(u, active)| {
            (u.len() == p && max_violation(&rows, u) <= feas_tol).then(|| {
                let tight: Vec<usize> = active
                    .iter()
                    .copied()
                    .filter(|&i| {
                        rows.get(i)
                            .and_then(|r| r.as_ref())
                            .is_some_and(|(a, b)| (b - dot(a, u)).abs() <= 1e-10 * scale)
                    })
                    .collect();
                (u.clone(), independent_subset(&rows, &tight, p))
            })
        });

        let (start, working) = match warm {
            Some(w) => w,
            None => {
                let origin: Vec<f64> = (0..p)
                    .map(|j| 0.0_f64.clamp(problem.lower[j], problem.upper[j]))
                    .collect();
                if max_violation(&rows, &origin) <= feas_tol {
                    (origin, Vec::new())
                } else {
                    match phase_one(problem, &rows, &origin, feas_tol)? {
                        Some(u) => (u, Vec::new()),
                        None => {
                            self.previous = None;
                            return Ok(infeasible(p, rows.len(), "phase 1 found no feasible point"));
                        }
                    }
                }
            }
        };

        let core = active_set(&hessian, &problem.linear, &rows, start, working, MAX_PIVOTS);
        let mut duals = vec![0.0; rows.len()];
        for (i, l) in core.working.iter().zip(&core.multipliers) {
            duals[*i] = l.max(0.0);
        }
        let report = check_kkt(problem, &core.x, &duals);
        if core.status == QpStatus::Optimal {
            self.previous = Some((core.x.clone(), core.working.clone()));
        } else {
            self.previous = None;
        }
        let mut active_set = core.working.clone();
        active_set.sort_unstable();
        Ok(QpSolution {
            u: core.x,
            status: core.status,
            kkt_residual: report.max(),
            active_set,
            duals,
            iterations: core.iterations,
        })
    }
}

fn infeasible(p: usize, nrows: usize, _why: &str) -> QpSolution {
    QpSolution {
        u: vec![0.0; p],
        status: QpStatus::Infeasible,
        kkt_residual: f64::INFINITY,
        active_set: Vec::new(),
        duals: vec![0.0; nrows],
        iterations: 0,
    }
}

fn regularized(h: &Matrix) -> Matrix {
    let h = h.symmetrized();
    if cholesky(&h).is_ok() {
        h
    } else {
        &h + &Matrix::identity(h.rows()).scale(TIKHONOV)
    }
}

fn max_violation(rows: &[Option<(Vec<f64>, f64)>], u: &[f64]) -> f64 {
    rows.iter()
        .flatten()
        .map(|(a, b)| dot(a, u) - b)
        .fold(0.0_f64, f64::max)
}

/// Greedy subset of `candidates` whose normals are linearly independent.
fn independent_subset(rows: &[Option<(Vec<f64>, f64)>], candidates: &[usize], p: usize) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::new();
    for &i in candidates {
        if basis.len() == p {
            break;
        }
        let Some((a, _)) = &rows[i] else { continue };
        let mut v = a.clone();
        for q in &basis {
            let c = dot(&v, q);
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= c * qi;
            }
        }
        let n = norm(&v);
        if n > 1e-8 * norm(a).max(1e-300) {
            basis.push(v.iter().map(|x| x / n).collect());
            out.push(i);
        }
    }
    out
}

/// Phase 1: minimize `t + ε/2 (‖u‖² + t²)` over `a_i·u − t ≤ b_i`,
/// box on `u`, `t ≥ −1`. Feasible iff the optimal `t` is (numerically) ≤ 0.
fn phase_one(
    problem: &QpProblem,
    rows: &[Option<(Vec<f64>, f64)>],
    origin: &[f64],
    feas_tol: f64,
) -> Result<Option<Vec<f64>>> {
    let p = problem.dim();
    let m = problem.num_rows();
    let n = p + 1;
    let eps = 1e-10;
    let hessian = Matrix::identity(n).scale(eps);
    let mut linear = vec![0.0; n];
    linear[p] = 1.0;
    let mut aug: Vec<Option<(Vec<f64>, f64)>> = Vec::with_capacity(rows.len() + 1);
    for (i, row) in rows.iter().enumerate() {
        aug.push(row.as_ref().map(|(a, b)| {
            let mut a2 = a.clone();
            a2.push(if i < m { -1.0 } else { 0.0 });
            (a2, *b)
        }));
    }
    aug.push(Some((unit(n, p, -1.0), 1.0)));
    let t0 = rows[..m]
        .iter()
        .flatten()
        .map(|(a, b)| dot(a, origin) - b)
        .fold(-1.0_f64, f64::max);
    let mut x0 = origin.to_vec();
    x0.push(t0);
    let core = active_set(&hessian, &linear, &aug, x0, Vec::new(), MAX_PIVOTS);
    if core.status == QpStatus::MaxIterations {
        return Err(Error::NoConvergence("QP phase 1 hit the pivot limit".into()));
    }
    let u = core.x[..p].to_vec();
    if max_violation(rows, &u) <= feas_tol.max(1e-9) {
        Ok(Some(u))
    } else {
        Ok(None)
    }
}

struct CoreResult {
    x: Vec<f64>,
    working: Vec<usize>,
    multipliers: Vec<f64>,
    status: QpStatus,
    iterations: usize,
}

/// Primal active-set iterations from a feasible `x` with working set `working`.
fn active_set(
    hessian: &Matrix,
    linear: &[f64],
    rows: &[Option<(Vec<f64>, f64)>],
    mut x: Vec<f64>,
    mut working: Vec<usize>,
    max_iter: usize,
) -> CoreResult {
    let n = x.len();
    let mut multipliers = Vec::new();
    for iter in 0..max_iter {
        let mut grad = hessian.mul_vec(&x);
        for (g, f) in grad.iter_mut().zip(linear) {
            *g += f;
        }
        let k = working.len();
        let mut kkt = Matrix::zeros(n + k, n + k);
        kkt.set_block(0, 0, hessian);
        for (c, &i) in working.iter().enumerate() {
            let (a, _) = rows[i].as_ref().expect("working rows are finite");
            for j in 0..n {
                kkt[(j, n + c)] = a[j];
                kkt[(n + c, j)] = a[j];
            }
        }
        let mut rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        rhs.extend(std::iter::repeat_n(0.0, k));
        let sol = match solve_linear(&kkt, &rhs) {
            Ok(s) => s,
            Err(_) => {
                // dependent working set: drop the newest row and retry
                working.pop();
                continue;
            }
        };
        let step = &sol[..n];
        multipliers = sol[n..].to_vec();
        let step_norm = norm(step);
        // A full working set pins x. A step whose model decrease ½pᵀHp is
        // invisible next to the objective value is round-off from a large
        // gradient.
        let objective = 0.5 * hessian.quad_form(&x) + dot(linear, &x);
        let decrease = 0.5 * hessian.quad_form(step);
        if k >= n
            || step_norm <= 1e-10 * (1.0 + norm(&x))
            || decrease <= 1e-15 * (1.0 + objective.abs())
        {
            // Multipliers carry the gradient's scale; judge their sign relative to it.
            let tol = 1e-12 * (1.0 + grad.iter().fold(0.0_f64, |m, g| m.max(g.abs())));
            let (worst, lmin) = multipliers
                .iter()
                .enumerate()
                .fold((usize::MAX, -tol), |acc, (c, &l)| if l < acc.1 { (c, l) } else { acc });
            if worst == usize::MAX || lmin >= -tol {
                return CoreResult {
                    x,
                    working,
                    multipliers,
                    status: QpStatus::Optimal,
                    iterations: iter,
                };
            }
            working.remove(worst);
            continue;
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for (i, row) in rows.iter().enumerate() {
            let Some((a, b)) = row else { continue };
            if working.contains(&i) {
                continue;
            }
            let ap = dot(a, step);
            if ap > 1e-14 * norm(a) * step_norm {
                let ai = ((b - dot(a, &x)) / ap).max(0.0);
                if ai < alpha {
                    alpha = ai;
                    blocking = Some(i);
                }
            }
        }
        for (xi, pi) in x.iter_mut().zip(step) {
            *xi += alpha * pi;
        }
        if let Some(i) = blocking {
            working.push(i);
        }
    }
    CoreResult {
        x,
        working,
        multipliers,
        status: QpStatus::MaxIterations,
        iterations: max_iter,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn active_lower_bound() {
        // min u² s.t. u ≥ 1
        let qp = QpProblem::new(Matrix::from_rows(&[[2.0]]), vec![0.0])
            .with_bounds(vec![1.0], vec![f64::INFINITY]);
        let sol = solve(&qp).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.u[0], 1.0, epsilon = 1e-12);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn unconstrained_minimum() {
        let qp = QpProblem::new(Matrix::identity(2).scale(2.0), vec![0.0, 0.0]);
        let sol = solve(&qp).unwrap();
        assert_eq!(sol.u, vec![0.0, 0.0]);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn halfspace_projection_by_hand() {
        // min ‖u‖² s.t. u1 + u2 ≥ 2  →  (1, 1), multiplier 2
        let mut qp = QpProblem::new(Matrix::identity(2).scale(2.0), vec![0.0, 0.0]);
        qp.push_row(&[-1.0, -1.0], -2.0);
        let sol = solve(&qp).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.u.as_slice(), [1.0, 1.0].as_slice(), epsilon = 1e-12);
        assert_relative_eq!(sol.duals[0], 2.0, epsilon = 1e-12);
        assert_eq!(sol.active_set, vec![0]);
    }

    #[test]
    fn detects_infeasibility() {
        let mut qp = QpProblem::new(Matrix::identity(2), vec![0.0, 0.0]);
        qp.push_row(&[1.0, 0.0], -1.0);
        qp.push_row(&[-1.0, 0.0], -1.0);
        assert_eq!(solve(&qp).unwrap().status, QpStatus::Infeasible);

        let qp = QpProblem::new(Matrix::identity(1), vec![0.0]).with_bounds(vec![1.0], vec![0.0]);
        assert_eq!(solve(&qp).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn infeasible_start_goes_through_phase_one() {
        // origin violates both rows; optimum sits on their intersection
        let mut qp = QpProblem::new(Matrix::identity(2), vec![0.0, 0.0]);
        qp.push_row(&[-1.0, 0.0], -3.0);
        qp.push_row(&[0.0, -1.0], -2.0);
        let sol = solve(&qp).unwrap();
        assert_relative_eq!(sol.u.as_slice(), [3.0, 2.0].as_slice(), epsilon = 1e-10);
    }

    #[test]
    fn singular_hessian_is_regularized() {
        // linear objective over a box: min -u1 - u2 on [0,1]²
        let qp = QpProblem::new(Matrix::zeros(2, 2), vec![-1.0, -1.0])
            .with_bounds(vec![0.0, 0.0], vec![1.0, 1.0]);
        let sol = solve(&qp).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.u.as_slice(), [1.0, 1.0].as_slice(), epsilon = 1e-9);
    }

    #[test]
    fn kkt_report_examples() {
        let mut qp = QpProblem::new(Matrix::identity(2).scale(2.0), vec![0.0, 0.0]);
        qp.push_row(&[-1.0, -1.0], -2.0);
        let sol = solve(&qp).unwrap();
        assert!(check_kkt(&qp, &sol.u, &sol.duals).max() <= 1e-8);

        let moved: Vec<f64> = sol.u.iter().map(|u| u + 0.1).collect();
        assert!(check_kkt(&qp, &moved, &sol.duals).stationarity > 0.01);

        // u = (0, 0) violates u1 + u2 ≥ 2 by exactly 2
        let rep = check_kkt(&qp, &[0.0, 0.0], &[0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(rep.primal_infeasibility, 2.0);
    }

    #[test]
    fn warm_start_matches_cold_start() {
        let mut qp = QpProblem::new(Matrix::identity(2).scale(2.0), vec![-4.0, 1.0])
            .with_bounds(vec![-1.0, -1.0], vec![1.5, 1.5]);
        qp.push_row(&[1.0, 1.0], 1.0);
        let mut solver = QpSolver::default();
        let first = solver.solve(&qp).unwrap();
        qp.linear = vec![-4.1, 1.1];
        let warm = solver.solve(&qp).unwrap();
        let cold = solve(&qp).unwrap();
        assert_relative_eq!(warm.u.as_slice(), cold.u.as_slice(), epsilon = 1e-12);
        assert_eq!(warm.active_set, cold.active_set);
        assert!(first.status == QpStatus::Optimal);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let qp = QpProblem::new(Matrix::identity(3), vec![0.0, 0.0]);
        assert!(matches!(solve(&qp), Err(Error::Dimension(_))));
    }
}
