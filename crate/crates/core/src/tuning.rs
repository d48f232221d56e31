//! Gradient descent on the tracking gains.
//!
//! The loss is `L = Σ ‖y_k − g_k‖²·dt` over logged steps with `t_k ≤ t_a`.
//! Its gradient treats the governor path as exogenous: the sensitivity
//! `S = ∂x/∂θ` is propagated through the same zero-order-hold RK4 step as
//! the plant, which makes it the exact derivative of a frozen-governor
//! replay.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{is_hurwitz, Matrix};
use crate::plants::{di_controller, di_dynamics, rk4_step, DoubleIntegratorGains};
use crate::sim::{compute_metrics, simulate, PlantModel, Prepared, TrajectoryLog};

/// Below this step size tuning gives up.
pub const MIN_ALPHA: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientOracle {
    Sensitivity,
    FiniteDifference,
}

/// `Σ ‖y − g‖²·dt` over rows with `t ≤ t_end`.
pub fn loss(log: &TrajectoryLog, t_end: f64) -> f64 {
    log.rows
        .iter()
        .take_while(|r| r.t <= t_end + 1e-9)
        .map(|r| {
            r.y.iter()
                .zip(&r.g)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum::<f64>()
        * log.dt
}

/// One RK4 step of the linear sensitivity equation `ṡ = A·s + B·w` with
/// `w` held over the step. `s` is `n × m`, `w` is `inputs × m`.
pub fn sensitivity_step(s: &Matrix, a: &Matrix, b: &Matrix, w: &Matrix, dt: f64) -> Matrix {
    let forcing = b * w;
    let f = |s: &Matrix| &(a * s) + &forcing;
    let k1 = f(s);
    let k2 = f(&(s + &k1.scale(0.5 * dt)));
    let k3 = f(&(s + &k2.scale(0.5 * dt)));
    let k4 = f(&(s + &k3.scale(dt)));
    let incr = &(&k1 + &k2.scale(2.0)) + &(&k3.scale(2.0) + &k4);
    s + &incr.scale(dt / 6.0)
}

/// Central differences of `f` at `theta`.
pub fn finite_diff_grad<F>(mut f: F, theta: &[f64], delta: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(delta > 0.0) {
        return Err(Error::Argument(format!("difference step must be positive, got {delta}")));
    }
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let mut hi = theta.to_vec();
        let mut lo = theta.to_vec();
        hi[i] += delta;
        lo[i] -= delta;
        grad.push((f(&hi)? - f(&lo)?) / (2.0 * delta));
    }
    Ok(grad)
}

/// Gain vector of a prepared scenario: `(k_p, k_d)` or quadrotor `(k_x, k_v)`.
pub fn theta_of(p: &Prepared) -> Vec<f64> {
    match &p.plant {
        PlantModel::DoubleIntegrator(g) => vec![g.kp, g.kd],
        PlantModel::Quadrotor(q) => vec![q.k_x, q.k_v],
    }
}

pub fn with_theta(p: &Prepared, theta: &[f64]) -> Result<Prepared> {
    if theta.len() != 2 {
        return Err(Error::Dimension(format!("expected two gains, got {}", theta.len())));
    }
    match &p.plant {
        PlantModel::DoubleIntegrator(_) => p.with_di_gains(DoubleIntegratorGains {
            kp: theta[0],
            kd: theta[1],
        }),
        PlantModel::Quadrotor(_) => p.with_quad_gains(theta[0], theta[1]),
    }
}

/// Output of a frozen-governor replay.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub loss: f64,
    /// `∂L/∂θ` from the sensitivity equation.
    pub gradient: Vec<f64>,
}

/// Replays the double integrator under gains `theta` against the governor
/// path recorded in `log`, accumulating the loss up to `t_end` and its
/// sensitivity gradient.
pub fn replay(p: &Prepared, log: &TrajectoryLog, theta: &[f64], t_end: f64) -> Result<Replay> {
    if !matches!(p.plant, PlantModel::DoubleIntegrator(_)) {
        return Err(Error::Config("sensitivity replay needs a double-integrator scenario".into()));
    }
    let gains = DoubleIntegratorGains {
        kp: theta[0],
        kd: theta[1],
    };
    let d = p.dimension();
    let n = 2 * d;
    let dt = log.dt;
    let mut a = Matrix::zeros(n, n);
    let mut b = Matrix::zeros(n, d);
    for i in 0..d {
        a[(i, d + i)] = 1.0;
        b[(d + i, i)] = 1.0;
    }
    let mut x = p.x0.clone();
    let mut s = Matrix::zeros(n, 2);
    let mut total = 0.0;
    let mut grad = [0.0; 2];
    let rows = &log.rows;
    for k in 0..rows.len() {
        let g = &rows[k].g;
        if rows[k].t > t_end + 1e-9 {
            break;
        }
        for i in 0..d {
            let e = x[i] - g[i];
            total += e * e * dt;
            grad[0] += 2.0 * e * s[(i, 0)] * dt;
            grad[1] += 2.0 * e * s[(i, 1)] * dt;
        }
        let Some(next) = rows.get(k + 1) else { break };
        // The input at step k tracks the updated governor.
        let g_in = &next.g;
        let u = di_controller(&x, g_in, gains);
        let mut w = Matrix::zeros(d, 2);
        for i in 0..d {
            w[(i, 0)] = x[i] - g_in[i] + gains.kp * s[(i, 0)] + gains.kd * s[(d + i, 0)];
            w[(i, 1)] = x[d + i] + gains.kp * s[(i, 1)] + gains.kd * s[(d + i, 1)];
        }
        s = sensitivity_step(&s, &a, &b, &w, dt);
        x = rk4_step(di_dynamics, &x, &u, dt).map_err(|e| e.at_step(k))?;
    }
    Ok(Replay {
        loss: total,
        gradient: grad.to_vec(),
    })
}

/// Loss of a frozen-governor replay only, for finite differences.
pub fn replay_loss(p: &Prepared, log: &TrajectoryLog, theta: &[f64], t_end: f64) -> Result<f64> {
    Ok(replay(p, log, theta, t_end)?.loss)
}

/// Closed-loop evaluation of one gain vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub t_g: Option<f64>,
    pub t_a: Option<f64>,
    pub gap: Option<f64>,
    pub mean_dsm: f64,
    pub min_dsm: f64,
    /// The task was not completed; the loss covers the whole horizon.
    pub incomplete: bool,
}

pub fn evaluate(p: &Prepared) -> Result<(Evaluation, TrajectoryLog)> {
    let (log, err) = simulate(p);
    if let Some(e) = err {
        return Err(e);
    }
    let m = compute_metrics(p, &log, None)?;
    let incomplete = m.t_a.is_none();
    let t_end = m.t_a.unwrap_or(f64::INFINITY);
    Ok((
        Evaluation {
            theta: theta_of(p),
            loss: loss(&log, t_end),
            t_g: m.t_g,
            t_a: m.t_a,
            gap: m.t_g.zip(m.t_a).map(|(g, a)| (g - a).abs()),
            mean_dsm: m.mean_dsm,
            min_dsm: m.min_dsm,
            incomplete,
        },
        log,
    ))
}

/// Gradient at the current iterate.
pub fn gradient(
    p: &Prepared,
    eval: &Evaluation,
    log: &TrajectoryLog,
    oracle: GradientOracle,
    delta: f64,
) -> Result<Vec<f64>> {
    let t_end = eval.t_a.unwrap_or(f64::INFINITY);
    match (oracle, &p.plant) {
        (GradientOracle::Sensitivity, PlantModel::DoubleIntegrator(_)) => {
            Ok(replay(p, log, &eval.theta, t_end)?.gradient)
        }
        _ => finite_diff_grad(
            |th| {
                let q = with_theta(p, th)?;
                Ok(evaluate(&q)?.0.loss)
            },
            &eval.theta,
            delta,
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningRun {
    /// Entry 0 is the initial gains; one entry per accepted iterate after.
    pub theta_history: Vec<Vec<f64>>,
    pub loss_history: Vec<f64>,
    pub evaluations: Vec<Evaluation>,
    pub gradients: Vec<Vec<f64>>,
    pub final_alpha: f64,
    pub stalled: bool,
}

impl TuningRun {
    pub fn initial(&self) -> &Evaluation {
        &self.evaluations[0]
    }

    pub fn last(&self) -> &Evaluation {
        self.evaluations.last().expect("never empty")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,theta_0,theta_1,loss,t_g,t_a,gap,mean_dsm,min_dsm,incomplete\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for (i, e) in self.evaluations.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{},{},{},{}",
                e.theta[0],
                e.theta[1],
                e.loss,
                opt(e.t_g),
                opt(e.t_a),
                opt(e.gap),
                e.mean_dsm,
                e.min_dsm,
                e.incomplete
            );
        }
        out
    }
}

fn stable(p: &Prepared) -> Result<bool> {
    is_hurwitz(&p.plant.linear_loop(p.dimension()))
}

/// `θ ← θ − α∇L` for `iterations` steps. A candidate that is not Hurwitz,
/// has no positive initial margin or fails in closed loop halves `α` and is
/// retried; below [`MIN_ALPHA`] the run stops with `stalled` set.
pub fn tune(p: &Prepared, iterations: usize, alpha: f64, oracle: GradientOracle) -> Result<TuningRun> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Argument(format!("step size must be nonnegative, got {alpha}")));
    }
    let delta = p.config.tuning.fd_step;
    let mut current = p.clone();
    let (mut eval, mut log) = evaluate(&current)?;
    let mut run = TuningRun {
        theta_history: vec![eval.theta.clone()],
        loss_history: vec![eval.loss],
        evaluations: vec![eval.clone()],
        gradients: Vec::new(),
        final_alpha: alpha,
        stalled: false,
    };
    let mut step = alpha;
    for _ in 0..iterations {
        let grad = gradient(&current, &eval, &log, oracle, delta)?;
        run.gradients.push(grad.clone());
        let accepted = loop {
            if step == 0.0 {
                break Some((current.clone(), eval.clone(), log.clone()));
            }
            if step < MIN_ALPHA {
                break None;
            }
            let theta: Vec<f64> = eval.theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let candidate = with_theta(&current, &theta)
                .and_then(|q| if stable(&q)? { Ok(q) } else { Err(Error::Config("not Hurwitz".into())) })
                .and_then(|q| evaluate(&q).map(|(e, l)| (q, e, l)));
            match candidate {
                Ok(c) => break Some(c),
                Err(_) => step *= 0.5,
            }
        };
        let Some((q, e, l)) = accepted else {
            run.stalled = true;
            break;
        };
        current = q;
        eval = e;
        log = l;
        run.theta_history.push(eval.theta.clone());
        run.loss_history.push(eval.loss);
        run.evaluations.push(eval.clone());
    }
    run.final_alpha = step;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;
    use crate::sim::{prepare, LogRow};
    use approx::assert_relative_eq;

    fn row(t: f64, y: Vec<f64>, g: Vec<f64>) -> LogRow {
        LogRow {
            t,
            state: y.clone(),
            y,
            g,
            dsm: 1.0,
            u_g: vec![],
            input: vec![],
            barrier: f64::NAN,
            terms: vec![],
            status: "optimal".into(),
            slack: 0.0,
            active: vec![],
            iterations: 0,
            dist_y: 1.0,
            dist_g: 1.0,
        }
    }

    #[test]
    fn loss_examples() {
        let dt = 0.1;
        let perfect = TrajectoryLog {
            dt,
            dimension: 2,
            term_labels: vec![],
            rows: (0..11).map(|k| row(k as f64 * dt, vec![1.0, 2.0], vec![1.0, 2.0])).collect(),
        };
        assert_eq!(loss(&perfect, 1.0), 0.0);
        // Constant offset (0.3, 0.4) over ten steps of 0.1 s.
        let offset = TrajectoryLog {
            rows: (0..10).map(|k| row(k as f64 * dt, vec![0.3, 0.4], vec![0.0, 0.0])).collect(),
            ..perfect
        };
        assert_relative_eq!(loss(&offset, 10.0), 0.25 * 1.0, epsilon = 1e-12);
        assert_relative_eq!(loss(&offset, 0.45), 0.25 * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn sensitivity_zero_forcing_stays_zero() {
        let a = Matrix::from_rows(&[[0.0, 1.0], [-6.0, -4.0]]);
        let b = Matrix::from_rows(&[[0.0], [1.0]]);
        let s = Matrix::zeros(2, 2);
        let w = Matrix::zeros(1, 2);
        assert_eq!(sensitivity_step(&s, &a, &b, &w, 0.01), s);
    }

    #[test]
    fn sensitivity_scalar_matches_euler_to_first_order() {
        // ẋ = θx: ṡ = θs + x.
        let (theta, x, s0, dt) = (-0.7, 1.3, 0.2, 1e-4);
        let a = Matrix::from_rows(&[[theta]]);
        let b = Matrix::from_rows(&[[1.0]]);
        let w = Matrix::from_rows(&[[x]]);
        let s = sensitivity_step(&Matrix::from_rows(&[[s0]]), &a, &b, &w, dt);
        let euler = s0 + dt * (theta * s0 + x);
        assert!((s[(0, 0)] - euler).abs() < 1e-7);
    }

    #[test]
    fn finite_diff_on_quadratic() {
        let target = [1.5, -2.0];
        let f = |t: &[f64]| Ok((t[0] - target[0]).powi(2) + 3.0 * (t[1] - target[1]).powi(2));
        let theta = [0.2, 0.7];
        let g = finite_diff_grad(f, &theta, 1e-4).unwrap();
        assert_relative_eq!(g[0], 2.0 * (0.2 - 1.5), epsilon = 1e-8);
        assert_relative_eq!(g[1], 6.0 * (0.7 + 2.0), epsilon = 1e-8);
        // Richardson: halving the step changes a cubic's estimate by O(δ²).
        let cubic = |t: &[f64]| Ok(t[0].powi(3));
        let g1 = finite_diff_grad(cubic, &[1.0], 1e-2).unwrap()[0];
        let g2 = finite_diff_grad(cubic, &[1.0], 5e-3).unwrap()[0];
        assert_relative_eq!(g1 - 3.0, 1e-4, epsilon = 1e-10);
        assert_relative_eq!((g1 - 3.0) / (g2 - 3.0), 4.0, epsilon = 1e-4);
    }

    #[test]
    fn descent_on_quadratic_converges_linearly() {
        let target = [1.5, -2.0];
        let grad = |t: &[f64]| vec![2.0 * (t[0] - target[0]), 2.0 * (t[1] - target[1])];
        let mut theta = vec![0.0, 0.0];
        let alpha = 0.1;
        let mut errs = Vec::new();
        for _ in 0..30 {
            let g = grad(&theta);
            for (t, gi) in theta.iter_mut().zip(&g) {
                *t -= alpha * gi;
            }
            errs.push(((theta[0] - target[0]).powi(2) + (theta[1] - target[1]).powi(2)).sqrt());
        }
        for w in errs.windows(2) {
            assert_relative_eq!(w[1] / w[0], 1.0 - 2.0 * alpha, epsilon = 1e-9);
        }
    }

    fn small_scenario() -> Prepared {
        let cfg = ScenarioConfig::from_toml(
            r#"
name = "small"
plant = "double_integrator"
horizon_s = 8.0
stl = "F[0,6] goal"

[initial]
position_m = [0.0, 0.0]

[environment]
dimension = 2
arena = { center_m = [0.0, 0.0], radius_m = 20.0 }

[regions.goal]
kind = "reach"
center_m = [4.0, 1.0]
radius_m = 1.0

[barrier]
reach_depth_m = 0.2
"#,
        )
        .unwrap();
        prepare(&cfg).unwrap()
    }

    #[test]
    fn sensitivity_gradient_matches_replay_differences() {
        let p = small_scenario();
        let (eval, log) = evaluate(&p).unwrap();
        let t_end = eval.t_a.unwrap();
        for theta in [[-6.0, -4.0], [-3.0, -2.5], [-10.0, -7.0]] {
            let r = replay(&p, &log, &theta, t_end).unwrap();
            let fd = finite_diff_grad(|t| replay_loss(&p, &log, t, t_end), &theta, 1e-4).unwrap();
            for i in 0..2 {
                let scale = fd[i].abs().max(1e-6);
                assert!((r.gradient[i] - fd[i]).abs() / scale < 1e-3, "{theta:?}: {:?} vs {fd:?}", r.gradient);
            }
        }
    }

    #[test]
    fn replay_reproduces_closed_loop_loss() {
        let p = small_scenario();
        let (eval, log) = evaluate(&p).unwrap();
        let r = replay(&p, &log, &eval.theta, eval.t_a.unwrap()).unwrap();
        assert_relative_eq!(r.loss, eval.loss, max_relative = 1e-12);
    }

    #[test]
    fn zero_step_keeps_gains() {
        let p = small_scenario();
        let run = tune(&p, 2, 0.0, GradientOracle::Sensitivity).unwrap();
        assert_eq!(run.theta_history.len(), 3);
        assert!(run.theta_history.iter().all(|t| t == &run.theta_history[0]));
        assert!(run.loss_history.iter().all(|l| *l == run.loss_history[0]));
        assert!(!run.stalled);
    }

    #[test]
    fn huge_step_stalls() {
        let p = small_scenario();
        let run = tune(&p, 1, 1e12, GradientOracle::Sensitivity).unwrap();
        // Either the halving finds a stable iterate or it stalls; iterates
        // are always stable.
        for t in &run.theta_history {
            assert!(t[0] < 0.0 && t[1] < 0.0);
        }
        assert_eq!(run.theta_history.len(), run.loss_history.len());
    }
}
