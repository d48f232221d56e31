//! `erg-cbf` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use erg_cbf::linalg::is_hurwitz;
use erg_cbf::plants::lie_input_coefficients;
use erg_cbf::scenario::{PlantKind, ScenarioConfig};
use erg_cbf::sim::{
    compute_metrics, erg_verdicts, prepare, run_hocbf_baseline, simulate, Prepared, TargetVerdict,
};
use erg_cbf::tuning::{self, GradientOracle};
use erg_cbf::Error;

const EXIT_OK: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_INCOMPLETE: u8 = 2;
const EXIT_STALLED: u8 = 3;
const EXIT_CONFIG: u8 = 64;

#[derive(Parser)]
#[command(name = "erg-cbf", version, about = "Governor-guided barrier navigation for STL tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario; writes trajectory.csv and metrics.json.
    Run(Common),
    /// Run the governor and the HOCBF baseline on the same scenario.
    Compare(Common),
    /// Gradient descent on the tracking gains.
    Tune(TuneArgs),
    /// Check a scenario without simulating it.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file.
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "ERG_CBF_OUT", default_value = "out")]
    out: PathBuf,
    /// Override the control rate.
    #[arg(long)]
    rate_hz: Option<f64>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum, default_value_t = OracleArg::Sensitivity)]
    grad_oracle: OracleArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Sensitivity,
    FiniteDifference,
}

impl From<OracleArg> for GradientOracle {
    fn from(o: OracleArg) -> Self {
        match o {
            OracleArg::Sensitivity => GradientOracle::Sensitivity,
            OracleArg::FiniteDifference => GradientOracle::FiniteDifference,
        }
    }
}

/// Error carrying its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: format!("invalid scenario: {e}"),
        }
    }

    fn hard(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_FAIL,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Compare(c) => cmd_compare(c),
        Command::Tune(t) => cmd_tune(t),
        Command::Validate(c) => Ok(cmd_validate(c)),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(c: &Common) -> std::result::Result<ScenarioConfig, Failure> {
    let text = fs::read_to_string(&c.config)
        .map_err(|e| Failure::config(format!("{}: {e}", c.config.display())))?;
    let mut cfg = ScenarioConfig::from_toml(&text)
        .map_err(|e| Failure::config(format!("{}: {e}", c.config.display())))?;
    if let Some(r) = c.rate_hz {
        cfg.rate_hz = r;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_prepared(c: &Common) -> std::result::Result<Prepared, Failure> {
    let cfg = load(c)?;
    prepare(&cfg).map_err(Failure::config)
}

fn write(dir: &Path, name: &str, contents: &str) -> std::result::Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::hard(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::hard(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> std::result::Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(Failure::hard)?;
    text.push('\n');
    write(dir, name, &text)
}

#[derive(Serialize)]
struct RelativeDegree {
    scenario: String,
    first_derivative_input_coefficient: f64,
    second_derivative_input_coefficient: f64,
    relative_degree_two: bool,
}

fn acc_check(cfg: &ScenarioConfig) -> std::result::Result<RelativeDegree, Failure> {
    cfg.validate().map_err(Failure::config)?;
    let fixture = cfg.acc.as_ref().expect("validated");
    let (first, second) = lie_input_coefficients(fixture);
    Ok(RelativeDegree {
        scenario: cfg.name.clone(),
        first_derivative_input_coefficient: first,
        second_derivative_input_coefficient: second,
        relative_degree_two: first.abs() < 1e-9 && (second + 1.0).abs() < 1e-6,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

fn cmd_run(c: &Common) -> CmdResult {
    let cfg = load(c)?;
    if cfg.plant == PlantKind::Acc {
        let report = acc_check(&cfg)?;
        write_json(&c.out, "relative_degree.json", &report)?;
        println!(
            "dot b input coefficient {:.3e}, ddot b input coefficient {:.6}",
            report.first_derivative_input_coefficient, report.second_derivative_input_coefficient
        );
        return Ok(if report.relative_degree_two { EXIT_OK } else { EXIT_FAIL });
    }
    let p = prepare(&cfg).map_err(Failure::config)?;
    let (log, err) = simulate(&p);
    let metrics = compute_metrics(&p, &log, err.as_ref()).map_err(Failure::hard)?;
    write(&c.out, "trajectory.csv", &log.to_csv())?;
    write_json(&c.out, "metrics.json", &metrics)?;
    println!(
        "{}: t_g {} s, t_a {} s, robustness(g) {}, min dsm {:.4}",
        metrics.scenario,
        fmt_opt(metrics.t_g),
        fmt_opt(metrics.t_a),
        fmt_opt(metrics.robustness_g),
        metrics.min_dsm
    );
    if let Some(e) = err {
        return Err(Failure::hard(e));
    }
    Ok(if !metrics.safe() {
        EXIT_FAIL
    } else if metrics.task_satisfied() {
        EXIT_OK
    } else {
        EXIT_INCOMPLETE
    })
}

#[derive(Serialize)]
struct ErgVerdict {
    verdicts: Vec<TargetVerdict>,
    task_satisfied: bool,
    min_dsm: f64,
    error: Option<String>,
}

#[derive(Serialize)]
struct HocbfVerdict {
    kappa1: f64,
    kappa2: f64,
    verdicts: Vec<TargetVerdict>,
    infeasible_steps: usize,
    collided: bool,
    final_position_m: Vec<f64>,
}

#[derive(Serialize)]
struct Comparison {
    scenario: String,
    erg: ErgVerdict,
    hocbf: HocbfVerdict,
}

fn cmd_compare(c: &Common) -> CmdResult {
    let p = load_prepared(c)?;
    if p.config.plant != PlantKind::DoubleIntegrator {
        return Err(Failure::config("compare needs a double-integrator scenario"));
    }
    let hocbf_cfg = p.config.hocbf;
    let (erg, baseline) = std::thread::scope(|s| {
        let base = s.spawn(|| run_hocbf_baseline(&p, &hocbf_cfg));
        let (log, err) = simulate(&p);
        (
            (log, err),
            base.join().expect("baseline thread panicked"),
        )
    });
    let (log, err) = erg;
    let baseline = baseline.map_err(Failure::hard)?;
    let metrics = compute_metrics(&p, &log, err.as_ref()).map_err(Failure::hard)?;
    let report = Comparison {
        scenario: p.config.name.clone(),
        erg: ErgVerdict {
            verdicts: erg_verdicts(&p, &log),
            task_satisfied: metrics.task_satisfied(),
            min_dsm: metrics.min_dsm,
            error: metrics.error.clone(),
        },
        hocbf: HocbfVerdict {
            kappa1: hocbf_cfg.kappa1,
            kappa2: hocbf_cfg.kappa2,
            verdicts: baseline.verdicts.clone(),
            infeasible_steps: baseline.infeasible_steps,
            collided: baseline.collided,
            final_position_m: baseline.log.rows.last().map(|r| r.y.clone()).unwrap_or_default(),
        },
    };
    write(&c.out, "erg_trajectory.csv", &log.to_csv())?;
    write(&c.out, "hocbf_trajectory.csv", &baseline.log.to_csv())?;
    write_json(&c.out, "compare.json", &report)?;
    let show = |v: &[TargetVerdict]| {
        v.iter()
            .map(|t| format!("{} {}", t.target, if t.reached { "reached" } else { "not reached" }))
            .collect::<Vec<_>>()
            .join(", ")
    };
    println!("erg:   {}", show(&report.erg.verdicts));
    println!("hocbf: {}", show(&report.hocbf.verdicts));
    match err {
        Some(e) => Err(Failure::hard(e)),
        None => Ok(EXIT_OK),
    }
}

#[derive(Serialize)]
struct GradientCheck {
    theta: Vec<f64>,
    sensitivity: Vec<f64>,
    finite_difference: Vec<f64>,
    max_relative_error: f64,
}

fn gradient_check(p: &Prepared) -> erg_cbf::Result<Option<GradientCheck>> {
    if p.config.plant != PlantKind::DoubleIntegrator {
        return Ok(None);
    }
    let (eval, log) = tuning::evaluate(p)?;
    let t_end = eval.t_a.unwrap_or(f64::INFINITY);
    let sens = tuning::replay(p, &log, &eval.theta, t_end)?.gradient;
    let fd = tuning::finite_diff_grad(
        |th| tuning::replay_loss(p, &log, th, t_end),
        &eval.theta,
        p.config.tuning.fd_step,
    )?;
    let max_relative_error = sens
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1e-12))
        .fold(0.0, f64::max);
    Ok(Some(GradientCheck {
        theta: eval.theta,
        sensitivity: sens,
        finite_difference: fd,
        max_relative_error,
    }))
}

#[derive(Serialize)]
struct FinalGains {
    plant: String,
    names: [&'static str; 2],
    values: Vec<f64>,
    initial_loss: f64,
    final_loss: f64,
    stalled: bool,
    final_alpha: f64,
}

fn cmd_tune(t: &TuneArgs) -> CmdResult {
    let p = load_prepared(&t.common)?;
    let iterations = t.iterations.unwrap_or(p.config.tuning.iterations);
    let alpha = t.alpha.unwrap_or(p.config.tuning.alpha);
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Failure::config(format!("--alpha must be nonnegative, got {alpha}")));
    }
    let check = gradient_check(&p).map_err(Failure::hard)?;
    if let Some(c) = &check {
        println!(
            "gradient check at {:?}: sensitivity {:?}, finite difference {:?}, max relative error {:.2e}",
            c.theta, c.sensitivity, c.finite_difference, c.max_relative_error
        );
        write_json(&t.common.out, "gradient_check.json", c)?;
    }
    let run = tuning::tune(&p, iterations, alpha, t.grad_oracle.into()).map_err(Failure::hard)?;
    write(&t.common.out, "tuning.csv", &run.to_csv())?;
    let names = match p.config.plant {
        PlantKind::Quadrotor => ["k_x", "k_v"],
        _ => ["kp", "kd"],
    };
    let last = run.last();
    let gains = FinalGains {
        plant: p.config.plant.as_str().into(),
        names,
        values: last.theta.clone(),
        initial_loss: run.initial().loss,
        final_loss: last.loss,
        stalled: run.stalled,
        final_alpha: run.final_alpha,
    };
    write_json(&t.common.out, "final_gains.json", &gains)?;
    println!(
        "{} accepted iterations: loss {:.6} -> {:.6}, {} = {:.4}, {} = {:.4}",
        run.evaluations.len() - 1,
        gains.initial_loss,
        gains.final_loss,
        names[0],
        gains.values[0],
        names[1],
        gains.values[1]
    );
    if run.stalled {
        eprintln!("tuning stalled: step size fell below {:e}", tuning::MIN_ALPHA);
        return Ok(EXIT_STALLED);
    }
    if iterations == 0 {
        println!("no iterations requested; gains unchanged");
        return Ok(EXIT_OK);
    }
    Ok(if gains.final_loss < gains.initial_loss { EXIT_OK } else { EXIT_INCOMPLETE })
}

struct Report {
    ok: bool,
}

impl Report {
    fn line(&mut self, name: &str, result: std::result::Result<String, String>) -> bool {
        match result {
            Ok(detail) => {
                println!("ok    {name}: {detail}");
                true
            }
            Err(detail) => {
                println!("FAIL  {name}: {detail}");
                self.ok = false;
                false
            }
        }
    }
}

fn cmd_validate(c: &Common) -> u8 {
    let mut report = Report { ok: true };
    let cfg = match load(c) {
        Ok(cfg) => {
            report.line("parse", Ok(c.config.display().to_string()));
            cfg
        }
        Err(f) => {
            report.line("parse", Err(f.message));
            return EXIT_FAIL;
        }
    };
    if cfg.plant == PlantKind::Acc {
        match acc_check(&cfg) {
            Ok(r) => {
                report.line(
                    "relative degree",
                    if r.relative_degree_two {
                        Ok(format!(
                            "input enters b at the second derivative (coefficient {:.6})",
                            r.second_derivative_input_coefficient
                        ))
                    } else {
                        Err(format!(
                            "coefficients {:.3e}, {:.6}",
                            r.first_derivative_input_coefficient, r.second_derivative_input_coefficient
                        ))
                    },
                );
            }
            Err(f) => {
                report.line("structure", Err(f.message));
            }
        }
        return if report.ok { EXIT_OK } else { EXIT_FAIL };
    }
    let dim = cfg.dimension();
    let loop_matrix = match cfg.plant {
        PlantKind::Quadrotor => {
            erg_cbf::plants::quadrotor::linearized_translational_loop(&cfg.quad_params())
        }
        _ => erg_cbf::plants::di_closed_loop(cfg.di_gains(), dim),
    };
    report.line(
        "hurwitz",
        match is_hurwitz(&loop_matrix) {
            Ok(true) => Ok("closed-loop matrix is Hurwitz".into()),
            Ok(false) => Err("closed-loop matrix is not Hurwitz".into()),
            Err(e) => Err(e.to_string()),
        },
    );
    let structure = report.line("structure", cfg.validate().map(|_| "fields consistent".into()).map_err(|e| e.to_string()));
    if !structure {
        return EXIT_FAIL;
    }
    let prepared = match prepare(&cfg) {
        Ok(p) => {
            report.line("initial dsm", Ok(format!("{:.6} > 0", p.initial_dsm)));
            p
        }
        Err(e) => {
            report.line("initial dsm", Err(e.to_string()));
            return EXIT_FAIL;
        }
    };
    let stl = match &prepared.barrier {
        None => Ok("no task barrier".to_string()),
        Some(b) => match b.evaluate(&prepared.g0, 0.0).map(|e| e.value) {
            None => Ok("no barrier term active at t = 0".into()),
            Some(v) if v > 0.0 => {
                Ok(format!("b(g0, 0) = {v:.6} > 0"))
            }
            Some(v) => Err(Error::InitialInfeasibility {
                formula: prepared.formula.to_string(),
                value: v,
            }
            .to_string()),
        },
    };
    report.line("stl initial feasibility", stl);
    if report.ok {
        EXIT_OK
    } else {
        EXIT_FAIL
    }
}
