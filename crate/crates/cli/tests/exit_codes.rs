//! End-to-end runs of the binary over the shipped scenarios and edited copies.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn erg(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_erg-cbf"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes a copy of a shipped scenario with one textual substitution.
fn edited(dir: &TempDir, name: &str, from: &str, to: &str) -> PathBuf {
    let text = fs::read_to_string(scenario(name)).unwrap();
    assert!(text.contains(from), "{from:?} not in {name}");
    let path = dir.path().join(format!("edited-{name}"));
    fs::write(&path, text.replacen(from, to, 1)).unwrap();
    path
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_double_integrator_succeeds() {
    let tmp = TempDir::new().unwrap();
    let o = erg(&["run", s(&scenario("double_integrator.scenario"))], tmp.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let m = json(tmp.path().join("metrics.json"));
    assert!(m["robustness_g"].as_f64().unwrap() > 0.0);
    assert!(m["min_dsm"].as_f64().unwrap() > 0.0);
    let csv = fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("# erg-cbf trajectory v1"));
}

#[test]
fn run_quadrotor_succeeds() {
    let tmp = TempDir::new().unwrap();
    let o = erg(&["run", s(&scenario("quadrotor.scenario"))], tmp.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn run_acc_reports_relative_degree() {
    let tmp = TempDir::new().unwrap();
    let o = erg(&["run", s(&scenario("acc.fixture"))], tmp.path());
    assert_eq!(code(&o), 0);
    let r = json(tmp.path().join("relative_degree.json"));
    assert_eq!(r["relative_degree_two"], Value::Bool(true));
    assert_eq!(r["first_derivative_input_coefficient"].as_f64(), Some(0.0));
}

#[test]
fn empty_task_is_satisfied_immediately() {
    let tmp = TempDir::new().unwrap();
    let cfg = edited(
        &tmp,
        "double_integrator.scenario",
        "stl = \"F[5,30] reach1 & F[30,80] reach2 & G[0,80] stay3\"",
        "stl = \"\"",
    );
    let o = erg(&["run", s(&cfg)], tmp.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let m = json(tmp.path().join("metrics.json"));
    assert_eq!(m["t_g"].as_f64(), Some(0.0));
    assert_eq!(m["t_a"].as_f64(), Some(0.0));
}

#[test]
fn invalid_configs_exit_64() {
    let tmp = TempDir::new().unwrap();
    let garbage = tmp.path().join("garbage.scenario");
    fs::write(&garbage, "plant = [").unwrap();
    let missing = tmp.path().join("missing.scenario");
    let negative_rate = edited(&tmp, "double_integrator.scenario", "rate_hz = 100.0", "rate_hz = -1.0");
    let unknown_key = tmp.path().join("unknown.scenario");
    let text = fs::read_to_string(scenario("double_integrator.scenario")).unwrap();
    fs::write(&unknown_key, text.replacen("seed = 0", "seed = 0\nrate = 5", 1)).unwrap();
    for path in [&garbage, &missing, &negative_rate, &unknown_key] {
        let o = erg(&["run", s(path)], tmp.path());
        assert_eq!(code(&o), 64, "{}", path.display());
        assert!(String::from_utf8_lossy(&o.stderr).contains("invalid scenario"));
    }
}

#[test]
fn runs_are_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let cfg = scenario("double_integrator.scenario");
    assert_eq!(code(&erg(&["run", s(&cfg)], a.path())), 0);
    assert_eq!(code(&erg(&["run", s(&cfg)], b.path())), 0);
    for f in ["trajectory.csv", "metrics.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn compare_reports_both_controllers() {
    let tmp = TempDir::new().unwrap();
    let o = erg(&["compare", s(&scenario("double_integrator.scenario"))], tmp.path());
    assert_eq!(code(&o), 0);
    let r = json(tmp.path().join("compare.json"));
    let reached = |who: &str| -> Vec<bool> {
        r[who]["verdicts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v["reached"].as_bool().unwrap())
            .collect()
    };
    assert_eq!(reached("erg"), [true, true]);
    assert!(!reached("hocbf")[0]);
    assert!(tmp.path().join("erg_trajectory.csv").exists());
    assert!(tmp.path().join("hocbf_trajectory.csv").exists());
}

#[test]
fn compare_rejects_other_plants() {
    let tmp = TempDir::new().unwrap();
    let o = erg(&["compare", s(&scenario("quadrotor.scenario"))], tmp.path());
    assert_eq!(code(&o), 64);
}

#[test]
fn validate_shipped_scenarios() {
    let tmp = TempDir::new().unwrap();
    for name in ["double_integrator.scenario", "quadrotor.scenario", "acc.fixture"] {
        let o = erg(&["validate", s(&scenario(name))], tmp.path());
        assert_eq!(code(&o), 0, "{name}: {}", stdout(&o));
        assert!(!stdout(&o).contains("FAIL"));
    }
}

#[test]
fn validate_flags_unstable_gains() {
    let tmp = TempDir::new().unwrap();
    let cfg = edited(&tmp, "double_integrator.scenario", "kp = -6.0", "kp = 6.0");
    let o = erg(&["validate", s(&cfg)], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL  hurwitz"), "{}", stdout(&o));
}

#[test]
fn validate_flags_governor_inside_obstacle() {
    let tmp = TempDir::new().unwrap();
    let cfg = edited(
        &tmp,
        "double_integrator.scenario",
        "governor_m = [0.0, 0.0]",
        "governor_m = [4.5, 0.0]",
    );
    let o = erg(&["validate", s(&cfg)], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL  initial dsm"), "{}", stdout(&o));
}

#[test]
fn tune_with_zero_iterations_is_a_no_op() {
    let tmp = TempDir::new().unwrap();
    let o = erg(
        &["tune", s(&scenario("double_integrator.scenario")), "--iterations", "0"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("no iterations requested"));
    let g = json(tmp.path().join("final_gains.json"));
    assert_eq!(g["values"], serde_json::json!([-6.0, -4.0]));
    assert_eq!(g["initial_loss"], g["final_loss"]);
}

#[test]
fn tune_lowers_the_loss() {
    let tmp = TempDir::new().unwrap();
    let o = erg(
        &["tune", s(&scenario("double_integrator.scenario")), "--iterations", "3"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let csv = fs::read_to_string(tmp.path().join("tuning.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    let check = json(tmp.path().join("gradient_check.json"));
    assert!(check["max_relative_error"].as_f64().unwrap() < 1e-3);
}

#[test]
fn tune_with_finite_differences() {
    let tmp = TempDir::new().unwrap();
    let o = erg(
        &[
            "tune",
            s(&scenario("double_integrator.scenario")),
            "--iterations",
            "1",
            "--grad-oracle",
            "finite-difference",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn tune_stalls_below_the_minimum_step() {
    let tmp = TempDir::new().unwrap();
    let o = erg(
        &["tune", s(&scenario("double_integrator.scenario")), "--iterations", "2", "--alpha", "1e-9"],
        tmp.path(),
    );
    assert_eq!(code(&o), 3);
    let csv = fs::read_to_string(tmp.path().join("tuning.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn out_directory_from_environment() {
    let tmp = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_erg-cbf"))
        .args(["run", s(&scenario("acc.fixture"))])
        .env("ERG_CBF_OUT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("relative_degree.json").exists());
}
