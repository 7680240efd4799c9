use std::path::Path;
use std::process::{Command, Output};

fn natspace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_natspace"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const TINY_BASELINE: &str = r#"{
    "kind": "baseline",
    "data": {"source": "synthetic", "categories": 3, "train_per_category": 12, "test_per_category": 4},
    "train": {"learning_rate": 0.05, "momentum": 0.9, "batch_size": 8, "epochs": 2},
    "runs": 1,
    "seed": 3
}"#;

const TINY_STEP: &str = r#"{
    "kind": "step-demo",
    "runs": 1,
    "step_demo": {
        "variants": [{"name": "A", "intervals": [{"start": 0.4, "end": 0.6, "count": 50}]}],
        "hidden": [4],
        "stages": [{"learning_rate": 0.05, "epochs": 2}],
        "grid_points": 11
    }
}"#;

#[test]
fn no_arguments_prints_usage() {
    let out = natspace(&[]);
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"), "{text}");
    assert!(text.contains("noise-sweep") && text.contains("relabel-glue"));
}

#[test]
fn unknown_flag_is_rejected() {
    let out = natspace(&["train", "--config", "x.json", "--epochz", "3"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--epochz"));
}

#[test]
fn step_demo_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "step.json", TINY_STEP);
    let out_dir = dir.path().join("out");
    let out = natspace(&["step-demo", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let curves = std::fs::read_to_string(out_dir.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 12);
    assert!(curves.starts_with("x,prediction,variant\n0,"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("train_mse"));
}

#[test]
fn overrides_reach_the_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "base.json", TINY_BASELINE);
    let out_dir = dir.path().join("out");
    let out_str = out_dir.to_str().unwrap();
    let out = natspace(&["train", "--config", &cfg, "--out", out_str, "--runs", "3", "--seed", "11"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let row = metrics.lines().nth(1).unwrap();
    assert!(row.starts_with("baseline,full,3,"), "{row}");
    let saved = std::fs::read_to_string(out_dir.join("config.json")).unwrap();
    assert!(saved.contains("\"seed\": 11"));
    assert_eq!(std::fs::read_dir(out_dir.join("traces/full")).unwrap().count(), 3);

    let again = natspace(&["report", "--out", out_str]);
    assert!(again.status.success());
    assert!(String::from_utf8_lossy(&again.stdout).contains("sigma_A"));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"kind": "baseline", "runs": 0}"#);
    let out = natspace(&["train", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.contains("runs: must be at least 1"), "{err}");
}

#[test]
fn kind_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "base.json", TINY_BASELINE);
    let out = natspace(&["subgroup", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config kind is baseline"));
}

#[test]
fn missing_output_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "base.json", TINY_BASELINE);
    let out = natspace(&["train", "--config", &cfg]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("out:"));
}
