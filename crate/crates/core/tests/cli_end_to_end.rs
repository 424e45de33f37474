use std::path::Path;
use std::process::Command;

use wlln_lab::cli::{preset, ExperimentConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wlln-lab"))
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

#[test]
fn counterexample_config_file_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = preset("counterexample").unwrap();
    cfg.reps = Some(2000);
    let path = write_config(tmp.path(), &cfg);
    let out = tmp.path().join("out");
    let status = bin()
        .args(["counterexample", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["verdict"], "diverges");
    assert_eq!(summary["seed"], 1);
    assert_eq!(summary["config_hash"], serde_json::json!(cfg.config_hash()));
    let csv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n,eps,reps,p_hat,ci_low,ci_high,statistic_kind,model_hash,seed"
    );
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let p_hat: f64 = cells[3].parse().unwrap();
        assert!((p_hat - 0.8).abs() < 0.04, "{line}");
        assert_eq!(cells[6], "max_abs");
    }
    let plot = std::fs::read_to_string(out.join("plot_convergence.csv")).unwrap();
    assert!(plot.starts_with("n,eps,p_hat,ci_low,ci_high\n"));
}

#[test]
fn env_overrides_out_dir_and_flags_override_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("env-out");
    let status = bin()
        .args([
            "simulate",
            "--preset",
            "reproducibility",
            "--seed",
            "99",
            "--reps",
            "100",
        ])
        .env("WLLN_LAB_OUT", &out)
        .env("WLLN_LAB_THREADS", "2")
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",99") && l.contains(",100,")));
}

#[test]
fn invalid_configs_exit_with_status_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        r#"{"schema": 1, "reps": 100, "experiment": {"kind": "simulate"}}"#,
        r#"{"schema": 1, "reps": 100, "experiment": {"kind": "counterexample", "p": 1.0, "n_grid": [10]}}"#,
        r#"{"schema": 1, "seed": 1, "reps": 100, "bogus": true, "experiment": {"kind": "counterexample", "p": 1.0, "n_grid": [10]}}"#,
        r#"{"schema": 1, "seed": 1, "reps": 5, "experiment": {"kind": "counterexample", "p": 1.0, "n_grid": [10]}}"#,
        r#"{"schema": 1, "seed": 1, "reps": 100, "experiment": {"kind": "counterexample", "p": 3.0, "n_grid": [10]}}"#,
        "not json",
    ];
    for (i, text) in cases.iter().enumerate() {
        let path = tmp.path().join(format!("bad{i}.json"));
        std::fs::write(&path, text).unwrap();
        let out = bin().args(["counterexample", "--config"]).arg(&path).output().unwrap();
        assert_eq!(
            out.status.code(),
            Some(2),
            "case {i}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!out.stderr.is_empty());
    }
    let out = bin().args(["dyadic", "--preset", "counterexample"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_with_status_one() {
    // Valid schema, but a Joffe path longer than one block without block mode.
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"{"schema": 1, "seed": 1, "reps": 100, "experiment": {"kind": "simulate",
        "model": {"kind": "joffe", "q": 7, "marginal": {"kind": "rademacher"}},
        "normalizer": {"p": 1.0}, "n_grid": [100]}}"#;
    let path = tmp.path().join("c.json");
    std::fs::write(&path, text).unwrap();
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn presets_listing_and_show_round_trip() {
    let out = bin().arg("presets").output().unwrap();
    assert!(out.status.success());
    let listing = String::from_utf8(out.stdout).unwrap();
    assert!(listing.lines().count() >= 12);
    let out = bin().args(["presets", "--show", "joffe-positive"]).output().unwrap();
    let cfg = ExperimentConfig::from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, preset("joffe-positive").unwrap());
}

#[test]
fn dyadic_outputs_have_documented_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    let status = bin()
        .args(["dyadic", "--preset", "bound-decay", "--out"])
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let head = |f: &str| {
        std::fs::read_to_string(out.join(f))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(head("plot_bounds.csv"), "n,tail_drift,I_bound,J_bound");
    assert_eq!(head("slack.csv"), "path,lhs,rhs,slack,violated");
    assert_eq!(head("km.csv"), "m,k_m,bound");
    assert_eq!(head("lambda.csv"), "a,b,n,sum,bound");
    let bounds = std::fs::read_to_string(out.join("bounds.csv")).unwrap();
    assert_eq!(bounds.lines().count(), 61);
}
