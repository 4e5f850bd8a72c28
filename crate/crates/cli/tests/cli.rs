use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sgdlab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgdlab")).args(args).arg("--out").arg(out).output().expect("sgdlab runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

#[test]
fn decompose_recovers_the_rotation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("dec");
    let run = sgdlab(&out, &["decompose", "f=[[1,-1],[1,1]]", "d=[[1,0],[0,1]]"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let rep = json(&out.join("decomposition.json"));
    let q: Vec<Vec<f64>> = serde_json::from_value(rep["q"].clone()).unwrap();
    let expected = [[0.0, -1.0], [1.0, 0.0]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((q[i][j] - expected[i][j]).abs() < 1e-12, "Q = {q:?}");
        }
    }
    assert_eq!(rep["status"], "unique");
    assert!(rep["sigma"].is_array());
}

#[test]
fn unstable_drift_has_no_stationary_covariance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("dec");
    let run = sgdlab(&out, &["decompose", "f=[[-1,0],[0,1]]"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(json(&out.join("decomposition.json"))["sigma"].is_null());
}

#[test]
fn missing_model_block_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("spec");
    let run = sgdlab(&out, &["spectrum"]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("model"));
    assert!(!out.exists());
}

#[test]
fn unknown_keys_and_bad_values_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(sgdlab(&out, &["fpk", "grid.nz=3"]).status.code(), Some(2));
    assert_eq!(sgdlab(&out, &["doublewell", "lambdas=[-1]"]).status.code(), Some(2));
    assert_eq!(sgdlab(&out, &["fpk", "notakeyvalue"]).status.code(), Some(2));
    let bad = write_config(tmp.path(), "{not json");
    assert_eq!(sgdlab(&out, &["fpk", "--config", &bad]).status.code(), Some(2));
}

#[test]
fn collinear_centers_give_rank_at_most_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"model": {"kind": "quadratic_ensemble", "centers": [[0, 0], [1, 2], [-2, -4], [0.5, 1]]},
            "train": {"eta": 0.1, "batch": 2, "steps": 50},
            "schemes": ["with_replacement", "without_replacement"]}"#,
    );
    let out = tmp.path().join("spec");
    let run = sgdlab(&out, &["spectrum", "--config", &cfg]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let summary = json(&out.join("summary.json"));
    for cp in summary["checkpoints"].as_array().unwrap() {
        for s in cp["spectra"].as_array().unwrap() {
            assert!(s["rank"].as_u64().unwrap() <= 1, "{s}");
        }
    }
    assert!(summary["temperatures"]["beta_inv"].as_f64().unwrap() > 0.0);
}

#[test]
fn tiny_mlp_spectra_at_three_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"model": {"kind": "tiny_mlp", "input_dim": 49, "hidden": 8, "classes": 5, "dataset_size": 128}}"#,
    );
    let out = tmp.path().join("spec");
    let run = sgdlab(&out, &["spectrum", "--config", &cfg, "train.steps=300"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for pct in ["020", "040", "100"] {
        let text = std::fs::read_to_string(out.join(format!("spectrum_{pct}_with_replacement.csv"))).unwrap();
        assert_eq!(text.lines().next(), Some("index,eigenvalue"));
        assert_eq!(text.lines().count(), 1 + 49 * 8 + 8 + 8 * 5 + 5);
    }
    let summary = json(&out.join("summary.json"));
    let steps: Vec<u64> = summary["checkpoints"].as_array().unwrap().iter().map(|c| c["step"].as_u64().unwrap()).collect();
    assert_eq!(steps, [60, 120, 300]);
}

#[test]
fn manifest_records_config_seed_and_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fpk");
    let run = sgdlab(&out, &["fpk", "--seed", "9", "grid.nx=24", "grid.ny=24", "init.kind=random"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["command"], "fpk");
    assert_eq!(m["seed"], 9);
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config"]["init"]["seed"], 9);
    assert_eq!(m["config"]["grid"]["nx"], 24);
    assert_eq!(m["config"]["beta_inv"], 1.0);
    assert!(m["artifact_version"].is_string());
    let files = m["files"].as_array().unwrap();
    assert!(files.len() >= 5);
    for f in files {
        let path = out.join(f["path"].as_str().unwrap());
        assert_eq!(std::fs::metadata(path).unwrap().len(), f["bytes"].as_u64().unwrap());
    }
}

#[test]
fn non_convergence_exits_four_with_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fpk");
    let run = sgdlab(&out, &["fpk", "grid.nx=24", "grid.ny=24", "steady.max_time=0.05"]);
    assert_eq!(run.status.code(), Some(4));
    assert_eq!(json(&out.join("manifest.json"))["status"], "not_converged");
    assert_eq!(json(&out.join("summary.json"))["converged"], false);
}

#[test]
fn divergence_exits_three_with_the_partial_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"model": {"kind": "quadratic_ensemble", "centers": [[1, 0], [0, 1]]},
            "eta": 5.0, "batch": 1, "steps": 1000, "record_every": 1}"#,
    );
    let out = tmp.path().join("sim");
    let run = sgdlab(&out, &["simulate", "--config", &cfg]);
    assert_eq!(run.status.code(), Some(3), "{}", String::from_utf8_lossy(&run.stderr));
    let summary = json(&out.join("summary.json"));
    assert!(summary["failure"].as_str().unwrap().contains("escape"));
    assert!(summary["snapshots"].as_u64().unwrap() > 1);
    assert_eq!(json(&out.join("manifest.json"))["status"], "numeric_failure");
}

#[test]
fn simulate_then_diagnose() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"model": {"kind": "double_well", "lambda": 1.5}, "method": "sde",
            "noise": {"kind": "isotropic", "scale": 1.0}, "dt": 0.001, "beta_inv": 1.0,
            "steps": 100000, "record_every": 10, "x0": [1, 0]}"#,
    );
    let sim = tmp.path().join("sim");
    let run = sgdlab(&sim, &["simulate", "--config", &cfg]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(json(&sim.join("summary.json"))["snapshots"], 10_001);

    let input = format!("input={}", sim.join("trajectory.bin").display());
    let diag = tmp.path().join("diag");
    let run = sgdlab(&diag, &["diagnose", &input, "max_lag=50"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let s = json(&diag.join("summary.json"));
    assert_eq!(s["dim"], 2);
    assert!(s["cycle"]["winding_number"].as_f64().unwrap() > 0.0);
    let ac = std::fs::read_to_string(diag.join("autocorrelation.csv")).unwrap();
    assert_eq!(ac.lines().count(), 52);

    let input = format!("input={}", sim.join("trajectory.csv").display());
    let diag_csv = tmp.path().join("diag_csv");
    assert!(sgdlab(&diag_csv, &["diagnose", &input, "max_lag=50"]).status.success());
    assert_eq!(json(&diag_csv.join("summary.json"))["spectrum"], s["spectrum"]);
}

#[test]
fn missing_input_file_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let run = sgdlab(&tmp.path().join("d"), &["diagnose", "input=/nonexistent/trajectory.bin"]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn thread_count_falls_back_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let run = Command::new(env!("CARGO_BIN_EXE_sgdlab"))
        .args(["decompose", "--out"])
        .arg(tmp.path().join("d"))
        .env("LAB_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("threads"));
}
