//! Fixed-step closed loop: governor, tracking controller, RK4 plant, log.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::governor::{self, GovernorContext, GovernorState, StepStatus};
use crate::linalg::Matrix;
use crate::plants::{
    di_closed_loop, di_controller, di_dynamics, hocbf_controller, position_output, quadrotor,
    rk4_step, Certificate, DoubleIntegratorGains, QuadController, QuadrotorParams, QuadrotorState,
};
use crate::qp::QpSolver;
use crate::scenario::{PlantKind, ScenarioConfig};
use crate::stl::{
    compile_barrier, completion_time, robustness, witness_time, Formula, Predicate, Signal,
    TimeVaryingBarrier,
};
use crate::world::Environment;

/// Tolerance used for every "never negative" safety check.
pub const SAFETY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum PlantModel {
    DoubleIntegrator(DoubleIntegratorGains),
    Quadrotor(QuadrotorParams),
}

impl PlantModel {
    pub fn state_dim(&self, dim: usize) -> usize {
        match self {
            PlantModel::DoubleIntegrator(_) => 2 * dim,
            PlantModel::Quadrotor(_) => quadrotor::STATE_DIM,
        }
    }

    pub fn input_dim(&self, dim: usize) -> usize {
        match self {
            PlantModel::DoubleIntegrator(_) => dim,
            PlantModel::Quadrotor(_) => 4,
        }
    }

    /// Closed loop used for the tracking certificate.
    pub fn linear_loop(&self, dim: usize) -> Matrix {
        match self {
            PlantModel::DoubleIntegrator(g) => di_closed_loop(*g, dim),
            PlantModel::Quadrotor(p) => quadrotor::linearized_translational_loop(p),
        }
    }

    pub fn certificate(&self, dim: usize) -> Result<Certificate> {
        Certificate::new(&self.linear_loop(dim), &position_output(dim))
    }
}

/// A scenario checked and compiled for simulation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ScenarioConfig,
    pub formula: Formula,
    pub barrier: Option<TimeVaryingBarrier>,
    pub env: Environment,
    pub plant: PlantModel,
    pub certificate: Certificate,
    pub x0: Vec<f64>,
    pub g0: Vec<f64>,
    pub initial_dsm: f64,
}

impl Prepared {
    pub fn dt(&self) -> f64 {
        self.config.dt()
    }

    pub fn steps(&self) -> usize {
        self.config.steps()
    }

    pub fn dimension(&self) -> usize {
        self.g0.len()
    }

    /// Same scenario with different double-integrator gains.
    pub fn with_di_gains(&self, gains: DoubleIntegratorGains) -> Result<Prepared> {
        gains.check()?;
        let mut out = self.clone();
        out.plant = PlantModel::DoubleIntegrator(gains);
        out.config.gains = Some(gains);
        out.refresh_certificate()?;
        Ok(out)
    }

    /// Same scenario with different quadrotor position/velocity gains.
    pub fn with_quad_gains(&self, k_x: f64, k_v: f64) -> Result<Prepared> {
        let PlantModel::Quadrotor(p) = &self.plant else {
            return Err(Error::Argument("scenario is not a quadrotor".into()));
        };
        let params = QuadrotorParams { k_x, k_v, ..p.clone() };
        params.validate()?;
        let mut out = self.clone();
        out.plant = PlantModel::Quadrotor(params.clone());
        out.config.quadrotor = Some(params);
        out.refresh_certificate()?;
        Ok(out)
    }

    fn refresh_certificate(&mut self) -> Result<()> {
        self.certificate = self.plant.certificate(self.dimension())?;
        self.initial_dsm = initial_margin(self)?;
        Ok(())
    }
}

fn initial_margin(p: &Prepared) -> Result<f64> {
    let delta = governor::dsm(&p.x0, &p.g0, &p.certificate.p, p.certificate.l, &p.env);
    if !(delta > 0.0) {
        return Err(Error::Config(format!(
            "initial safety margin is {delta:.6}, must be positive (g(0) = {:?}, distance to unsafe set {:.6})",
            p.g0,
            p.env.distance_to_unsafe(&p.g0)
        )));
    }
    Ok(delta)
}

/// Validates a double-integrator or quadrotor scenario and compiles its task.
pub fn prepare(config: &ScenarioConfig) -> Result<Prepared> {
    config.validate()?;
    let plant = match config.plant {
        PlantKind::DoubleIntegrator => PlantModel::DoubleIntegrator(config.di_gains()),
        PlantKind::Quadrotor => PlantModel::Quadrotor(config.quad_params()),
        PlantKind::Acc => {
            return Err(Error::Config(
                "plant `acc` is a derivative fixture and cannot be simulated".into(),
            ))
        }
    };
    let dim = config.dimension();
    let mut env = config.environment.clone().expect("validated");
    // The quadrotor is tracked by its center of mass; grow obstacles by a rotor arm.
    if let PlantModel::Quadrotor(q) = &plant {
        env = env.inflate(q.arm_m)?;
    }
    let formula = config.formula()?;
    let g0 = config.initial_governor();
    let pos = config.initial.position_m.clone();
    let vel = config.initial_velocity();
    let x0 = match &plant {
        PlantModel::DoubleIntegrator(_) => [pos, vel].concat(),
        PlantModel::Quadrotor(_) => {
            let mut s = QuadrotorState::hover_at([pos[0], pos[1], pos[2]]);
            s.v = [vel[0], vel[1], vel[2]];
            s.to_vec()
        }
    };
    let certificate = plant
        .certificate(dim)
        .map_err(|e| Error::Config(format!("gains: {e}")))?;
    let barrier = if formula == Formula::True {
        None
    } else {
        Some(compile_barrier(&formula, &g0, &config.barrier)?)
    };
    let mut out = Prepared {
        config: config.clone(),
        formula,
        barrier,
        env,
        plant,
        certificate,
        x0,
        g0,
        initial_dsm: 0.0,
    };
    out.initial_dsm = initial_margin(&out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub state: Vec<f64>,
    pub y: Vec<f64>,
    pub g: Vec<f64>,
    pub dsm: f64,
    pub u_g: Vec<f64>,
    pub input: Vec<f64>,
    /// Combined task barrier at `(g, t)`; NaN without an active term.
    pub barrier: f64,
    /// Per-term values, NaN outside their windows.
    pub terms: Vec<f64>,
    pub status: String,
    pub slack: f64,
    pub active: Vec<usize>,
    pub iterations: usize,
    pub dist_y: f64,
    pub dist_g: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub dt: f64,
    pub dimension: usize,
    pub term_labels: Vec<String>,
    pub rows: Vec<LogRow>,
}

pub const CSV_VERSION_LINE: &str = "# erg-cbf trajectory v1";

impl TrajectoryLog {
    pub fn y_signal(&self) -> Result<Signal> {
        Signal::new(self.dt, self.rows.iter().map(|r| r.y.clone()).collect())
    }

    pub fn g_signal(&self) -> Result<Signal> {
        Signal::new(self.dt, self.rows.iter().map(|r| r.g.clone()).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CSV_VERSION_LINE}");
        for (i, l) in self.term_labels.iter().enumerate() {
            let _ = writeln!(out, "# b_{i}: {l}");
        }
        let Some(first) = self.rows.first() else {
            return out;
        };
        let mut header = vec!["t".to_string()];
        let cols = |header: &mut Vec<String>, prefix: &str, n: usize| {
            header.extend((0..n).map(|i| format!("{prefix}_{i}")));
        };
        cols(&mut header, "state", first.state.len());
        cols(&mut header, "y", self.dimension);
        cols(&mut header, "g", self.dimension);
        header.push("dsm".into());
        cols(&mut header, "u_g", self.dimension);
        cols(&mut header, "input", first.input.len());
        header.push("barrier".into());
        cols(&mut header, "b", self.term_labels.len());
        for h in ["status", "slack", "active", "qp_iterations", "dist_y", "dist_g"] {
            header.push(h.into());
        }
        let _ = writeln!(out, "{}", header.join(","));
        for r in &self.rows {
            let mut f: Vec<String> = vec![r.t.to_string()];
            let nums = |f: &mut Vec<String>, v: &[f64]| f.extend(v.iter().map(|x| x.to_string()));
            nums(&mut f, &r.state);
            nums(&mut f, &r.y);
            nums(&mut f, &r.g);
            f.push(r.dsm.to_string());
            nums(&mut f, &r.u_g);
            nums(&mut f, &r.input);
            f.push(r.barrier.to_string());
            nums(&mut f, &r.terms);
            f.push(r.status.clone());
            f.push(r.slack.to_string());
            f.push(
                r.active
                    .iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
            );
            f.push(r.iterations.to_string());
            f.push(r.dist_y.to_string());
            f.push(r.dist_g.to_string());
            let _ = writeln!(out, "{}", f.join(","));
        }
        out
    }
}

enum Tracker {
    Di(DoubleIntegratorGains),
    Quad(QuadController),
}

impl Tracker {
    fn new(plant: &PlantModel, dt: f64) -> Self {
        match plant {
            PlantModel::DoubleIntegrator(g) => Tracker::Di(*g),
            PlantModel::Quadrotor(p) => Tracker::Quad(QuadController::new(p.clone(), dt)),
        }
    }

    fn input(&mut self, x: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        match self {
            Tracker::Di(gains) => Ok(di_controller(x, g, *gains)),
            Tracker::Quad(c) => c.control(&QuadrotorState::from_slice(x), [g[0], g[1], g[2]]),
        }
    }

    fn step(&self, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
        match self {
            Tracker::Di(_) => rk4_step(di_dynamics, x, u, dt),
            Tracker::Quad(c) => {
                let params = &c.params;
                let mut next = rk4_step(|s, u| quadrotor::quad_dynamics(s, u, params), x, u, dt)?;
                quadrotor::renormalize_state(&mut next);
                Ok(next)
            }
        }
    }
}

fn make_row(
    p: &Prepared,
    t: f64,
    x: &[f64],
    g: &[f64],
    dsm: f64,
    input: Vec<f64>,
) -> LogRow {
    let dim = p.dimension();
    let y = x[..dim].to_vec();
    let (barrier, terms) = match &p.barrier {
        Some(b) => (
            b.evaluate(g, t).map_or(f64::NAN, |e| e.value),
            b.term_values(g, t),
        ),
        None => (f64::NAN, Vec::new()),
    };
    LogRow {
        t,
        state: x.to_vec(),
        dist_y: p.env.distance_to_unsafe(&y),
        dist_g: p.env.distance_to_unsafe(g),
        y,
        g: g.to_vec(),
        dsm,
        u_g: vec![0.0; dim],
        input,
        barrier,
        terms,
        status: "end".into(),
        slack: 0.0,
        active: Vec::new(),
        iterations: 0,
    }
}

/// Runs the closed loop to the horizon. On a hard failure the log holds
/// every completed step and the error carries the step index.
pub fn simulate(p: &Prepared) -> (TrajectoryLog, Option<Error>) {
    let dt = p.dt();
    let n = p.steps();
    let dim = p.dimension();
    let mut log = TrajectoryLog {
        dt,
        dimension: dim,
        term_labels: p
            .barrier
            .as_ref()
            .map(|b| {
                b.terms()
                    .iter()
                    .map(|t| format!("{} [{:?} on {}]", t.label, t.kind, t.atom.name))
                    .collect()
            })
            .unwrap_or_default(),
        rows: Vec::with_capacity(n + 1),
    };
    let ctx = GovernorContext {
        p: &p.certificate.p,
        l: p.certificate.l,
        env: &p.env,
        barrier: p.barrier.as_ref(),
        cfg: &p.config.governor,
        dt,
    };
    let mut solver = QpSolver::default();
    let mut tracker = Tracker::new(&p.plant, dt);
    let mut gov = GovernorState::new(p.g0.clone());
    let mut x = p.x0.clone();
    for k in 0..n {
        let t = k as f64 * dt;
        gov.t = t;
        let step = (|| -> Result<(GovernorState, Vec<f64>, Vec<f64>)> {
            let next = governor::governor_step(&gov, &x, &ctx, &mut solver)?;
            let u = tracker.input(&x, &next.g)?;
            let x_next = tracker.step(&x, &u, dt)?;
            Ok((next, u, x_next))
        })();
        match step {
            Ok((next, u, x_next)) => {
                let mut row = make_row(p, t, &x, &gov.g, next.dsm, u);
                let diag = next.last.as_ref().expect("set by governor_step");
                row.u_g = diag.u_g.clone();
                row.status = diag.status.as_str().to_string();
                row.slack = diag.slack;
                row.active = diag.active_set.clone();
                row.iterations = diag.iterations;
                log.rows.push(row);
                gov = next;
                x = x_next;
            }
            Err(e) => return (log, Some(e.at_step(k))),
        }
    }
    let t = n as f64 * dt;
    let dsm = governor::dsm(&x, &gov.g, &p.certificate.p, p.certificate.l, &p.env);
    let zero = vec![0.0; p.plant.input_dim(dim)];
    log.rows.push(make_row(p, t, &x, &gov.g, dsm, zero));
    (log, None)
}

pub fn run_closed_loop(p: &Prepared) -> Result<TrajectoryLog> {
    match simulate(p) {
        (log, None) => Ok(log),
        (_, Some(e)) => Err(e),
    }
}

/// Schedule of one compiled barrier term.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermSchedule {
    pub label: String,
    pub gamma0: f64,
    pub ramp_start_s: f64,
    pub t_star_s: f64,
    pub window_s: (f64, f64),
}

/// Summary written to `metrics.json`. Times are `None` when the task is
/// not completed within the log; robustness is `None` when the log is
/// shorter than the formula horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub scenario: String,
    pub plant: String,
    pub seed: u64,
    pub steps: usize,
    pub dt_s: f64,
    pub formula: String,
    /// Earliest time the governor path witnesses the task.
    pub t_g: Option<f64>,
    /// Earliest time the agent output witnesses the task.
    pub t_a: Option<f64>,
    /// As above, additionally waiting for every always-window to close.
    pub t_g_determined: Option<f64>,
    pub t_a_determined: Option<f64>,
    /// Infinite robustness (an empty task) is reported as `None` with the
    /// satisfaction flag set.
    pub robustness_g: Option<f64>,
    pub robustness_y: Option<f64>,
    pub satisfied_g: bool,
    pub satisfied_y: bool,
    pub min_dsm: f64,
    pub mean_dsm: f64,
    pub min_distance_y_m: f64,
    pub min_distance_g_m: f64,
    pub relaxed_steps: usize,
    pub frozen_steps: usize,
    pub qp_iterations_total: usize,
    pub qp_iterations_max: usize,
    pub max_slack: f64,
    pub max_orthonormality_error: Option<f64>,
    pub initial_dsm: f64,
    pub output_gain: f64,
    pub smoothing: Option<f64>,
    pub barrier_terms: Vec<TermSchedule>,
    pub error: Option<String>,
}

impl Metrics {
    pub fn task_satisfied(&self) -> bool {
        self.error.is_none() && self.t_a.is_some() && self.satisfied_g
    }

    pub fn safe(&self) -> bool {
        self.error.is_none()
            && self.min_dsm >= -SAFETY_TOL
            && self.min_distance_y_m >= -SAFETY_TOL
            && self.min_distance_g_m >= -SAFETY_TOL
    }
}

fn opt(r: Result<f64>) -> Option<f64> {
    r.ok().filter(|v| v.is_finite())
}

pub fn compute_metrics(p: &Prepared, log: &TrajectoryLog, error: Option<&Error>) -> Result<Metrics> {
    let ys = log.y_signal()?;
    let gs = log.g_signal()?;
    let f = &p.formula;
    let dsm: Vec<f64> = log.rows.iter().map(|r| r.dsm).collect();
    let fold_min = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::INFINITY, f64::min);
    let ortho = match p.plant {
        PlantModel::Quadrotor(_) => Some(
            log.rows
                .iter()
                .map(|r| QuadrotorState::from_slice(&r.state).orthonormality_error())
                .fold(0.0, f64::max),
        ),
        PlantModel::DoubleIntegrator(_) => None,
    };
    let rows = &log.rows[..log.rows.len().saturating_sub(1)];
    Ok(Metrics {
        scenario: p.config.name.clone(),
        plant: p.config.plant.as_str().into(),
        seed: p.config.seed,
        steps: log.rows.len().saturating_sub(1),
        dt_s: log.dt,
        formula: f.to_string(),
        t_g: witness_time(&gs, f).ok().flatten(),
        t_a: witness_time(&ys, f).ok().flatten(),
        t_g_determined: completion_time(&gs, f).ok().flatten(),
        t_a_determined: completion_time(&ys, f).ok().flatten(),
        robustness_g: opt(robustness(&gs, f, 0.0)),
        robustness_y: opt(robustness(&ys, f, 0.0)),
        satisfied_g: robustness(&gs, f, 0.0).is_ok_and(|r| r > 0.0),
        satisfied_y: robustness(&ys, f, 0.0).is_ok_and(|r| r > 0.0),
        min_dsm: fold_min(&mut dsm.iter().copied()),
        mean_dsm: dsm.iter().sum::<f64>() / dsm.len().max(1) as f64,
        min_distance_y_m: fold_min(&mut log.rows.iter().map(|r| r.dist_y)),
        min_distance_g_m: fold_min(&mut log.rows.iter().map(|r| r.dist_g)),
        relaxed_steps: rows.iter().filter(|r| r.status == StepStatus::Relaxed.as_str()).count(),
        frozen_steps: rows.iter().filter(|r| r.status == StepStatus::Frozen.as_str()).count(),
        qp_iterations_total: rows.iter().map(|r| r.iterations).sum(),
        qp_iterations_max: rows.iter().map(|r| r.iterations).max().unwrap_or(0),
        max_slack: rows
            .iter()
            .map(|r| r.slack)
            .filter(|s| s.is_finite())
            .fold(0.0, f64::max),
        max_orthonormality_error: ortho,
        initial_dsm: p.initial_dsm,
        output_gain: p.certificate.l,
        smoothing: p.barrier.as_ref().map(|b| b.smoothing()),
        barrier_terms: p
            .barrier
            .iter()
            .flat_map(|b| b.terms())
            .map(|t| TermSchedule {
                label: t.label.clone(),
                gamma0: t.gamma0,
                ramp_start_s: t.ramp_start,
                t_star_s: t.t_star,
                window_s: t.window,
            })
            .collect(),
        error: error.map(|e| e.to_string()),
    })
}

/// A reach target of the task, in visiting order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Target {
    pub name: String,
    pub center_m: Vec<f64>,
    pub radius_m: f64,
    pub window: (f64, f64),
}

/// Reach atoms under top-level eventually conjuncts, sorted by window start.
pub fn task_targets(f: &Formula) -> Vec<Target> {
    let mut out: Vec<Target> = Vec::new();
    for c in f.conjuncts() {
        if let Formula::Eventually { interval, child } = c {
            for a in child.atoms() {
                if let (Predicate::Reach { center_m, radius_m }, false) = (&a.predicate, a.negated) {
                    out.push(Target {
                        name: a.name.clone(),
                        center_m: center_m.clone(),
                        radius_m: *radius_m,
                        window: (interval.a, interval.b),
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| a.window.0.total_cmp(&b.window.0));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetVerdict {
    pub target: String,
    pub reached: bool,
    /// First time the agent was inside the region.
    pub first_reached_s: Option<f64>,
    pub within_window: bool,
}

fn verdict(target: &Target, ys: &[Vec<f64>], dt: f64, respect_window: bool) -> TargetVerdict {
    let pred = Predicate::Reach {
        center_m: target.center_m.clone(),
        radius_m: target.radius_m,
    };
    let inside = |k: usize| pred.eval(&ys[k]) > 0.0;
    let first = (0..ys.len()).find(|&k| inside(k)).map(|k| k as f64 * dt);
    let eps = 1e-9;
    let within = (0..ys.len()).any(|k| {
        let t = k as f64 * dt;
        t >= target.window.0 - eps && t <= target.window.1 + eps && inside(k)
    });
    TargetVerdict {
        target: target.name.clone(),
        reached: if respect_window { within } else { first.is_some() },
        first_reached_s: first,
        within_window: within,
    }
}

/// ERG verdicts: a target counts as reached when the agent is inside it
/// during its window.
pub fn erg_verdicts(p: &Prepared, log: &TrajectoryLog) -> Vec<TargetVerdict> {
    let ys: Vec<Vec<f64>> = log.rows.iter().map(|r| r.y.clone()).collect();
    task_targets(&p.formula)
        .iter()
        .map(|t| verdict(t, &ys, log.dt, true))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRun {
    pub log: TrajectoryLog,
    pub verdicts: Vec<TargetVerdict>,
    pub infeasible_steps: usize,
    pub collided: bool,
}

/// HOCBF-filtered PD controller visiting the task targets in order.
/// The next target is commanded once the agent is inside the current one.
/// A target counts as reached if the agent enters it at any time.
pub fn run_hocbf_baseline(p: &Prepared, cfg: &crate::plants::HocbfConfig) -> Result<BaselineRun> {
    let PlantModel::DoubleIntegrator(gains) = p.plant else {
        return Err(Error::Config("the HOCBF baseline needs a double-integrator scenario".into()));
    };
    cfg.validate()?;
    let targets = task_targets(&p.formula);
    let dt = p.dt();
    let dim = p.dimension();
    let mut log = TrajectoryLog {
        dt,
        dimension: dim,
        term_labels: Vec::new(),
        rows: Vec::new(),
    };
    let mut x = p.x0.clone();
    let mut idx = 0;
    let mut infeasible_steps = 0;
    let mut collided = false;
    for k in 0..=p.steps() {
        let t = k as f64 * dt;
        let y = &x[..dim];
        while idx < targets.len()
            && Predicate::reach(targets[idx].center_m.clone(), targets[idx].radius_m).eval(y) > 0.0
        {
            idx += 1;
        }
        let goal = targets
            .get(idx)
            .map_or_else(|| targets.last().map_or(p.g0.clone(), |t| t.center_m.clone()), |t| t.center_m.clone());
        let mut row = make_row(p, t, &x, &goal, f64::NAN, vec![0.0; dim]);
        row.status = "baseline".into();
        if row.dist_y < -SAFETY_TOL {
            collided = true;
            row.status = "collision".into();
            log.rows.push(row);
            break;
        }
        if k == p.steps() {
            row.status = "end".into();
            log.rows.push(row);
            break;
        }
        let out = hocbf_controller(&x, &goal, &p.env, gains, cfg).map_err(|e| e.at_step(k))?;
        if out.infeasible {
            infeasible_steps += 1;
            row.status = "infeasible".into();
        }
        row.input = out.u.clone();
        log.rows.push(row);
        x = rk4_step(di_dynamics, &x, &out.u, dt).map_err(|e| e.at_step(k))?;
    }
    let ys: Vec<Vec<f64>> = log.rows.iter().map(|r| r.y.clone()).collect();
    let verdicts = targets.iter().map(|t| verdict(t, &ys, dt, false)).collect();
    Ok(BaselineRun {
        log,
        verdicts,
        infeasible_steps,
        collided,
    })
}
