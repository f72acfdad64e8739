//! End-to-end runs of the `gwi-lab` binary: exit codes, artifacts and
//! reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gwi-lab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn out_arg(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

const SMALL_ESTIMATE: &str = r#"{
    "experiment": "estimate",
    "model": {
        "n": 60,
        "offspring": {"family": "near-critical-geometric", "a": 1.0},
        "immigration": {"family": "geometric", "p": 0.5}
    },
    "estimators": [
        {"estimator": "clse-mean", "normalization": ["n"]},
        {"estimator": "clse-variances", "normalization": ["n-three-halves", "sqrt-n"]}
    ],
    "run": {"replicates": 1}
}"#;

#[test]
fn diagnose_preset_passes_its_checks() {
    let tmp = TempDir::new().unwrap();
    let out = out_arg(tmp.path(), "diag");
    let result = lab(&["diagnose", "--preset", "stable-diagnostics", "--check", "--workers", "2", "--out", &out]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("diag/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["experiment"], "diagnose");
    assert_eq!(summary["pass"], true);
    let table = fs::read_to_string(tmp.path().join("diag/diagnostics.csv")).unwrap();
    assert!(table.lines().count() > 1);
}

#[test]
fn single_replicate_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), SMALL_ESTIMATE);
    for (name, workers) in [("a", "1"), ("b", "1"), ("c", "8")] {
        let out = out_arg(tmp.path(), name);
        let result = lab(&["estimate", "--config", &config, "--seed", "7", "--workers", workers, "--out", &out]);
        assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    }
    for file in ["estimates.csv", "summary.json"] {
        let a = fs::read(tmp.path().join("a").join(file)).unwrap();
        assert_eq!(a, fs::read(tmp.path().join("b").join(file)).unwrap(), "{file}");
        assert_eq!(a, fs::read(tmp.path().join("c").join(file)).unwrap(), "{file}");
    }
    let csv = fs::read_to_string(tmp.path().join("a/estimates.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("replicate,n,estimator,value,normalized_value"));
}

#[test]
fn different_seeds_give_different_paths() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), &SMALL_ESTIMATE.replace("\"estimate\"", "\"simulate\""));
    for seed in ["1", "2"] {
        let out = out_arg(tmp.path(), seed);
        assert!(lab(&["simulate", "--config", &config, "--seed", seed, "--out", &out]).status.success());
    }
    let a = fs::read(tmp.path().join("1/paths.csv")).unwrap();
    assert_ne!(a, fs::read(tmp.path().join("2/paths.csv")).unwrap());
}

#[test]
fn missing_seed_is_a_configuration_error() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), SMALL_ESTIMATE);
    let out = out_arg(tmp.path(), "o");
    let result = lab(&["estimate", "--config", &config, "--out", &out]);
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("seed"));
}

#[test]
fn malformed_configs_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let out = out_arg(tmp.path(), "o");
    let cases = [
        SMALL_ESTIMATE.replace("\"replicates\": 1", "\"replicates\": 0"),
        SMALL_ESTIMATE.replace("\"n\": 60", "\"n\": 60, \"typo\": 1"),
        "{ not json".to_string(),
    ];
    for body in &cases {
        let config = write_config(tmp.path(), body);
        let result = lab(&["estimate", "--config", &config, "--seed", "1", "--out", &out]);
        assert_eq!(result.status.code(), Some(2), "{body}");
    }
    // Experiment on the command line must match the config.
    let config = write_config(tmp.path(), SMALL_ESTIMATE);
    assert_eq!(lab(&["diagnose", "--config", &config, "--seed", "1", "--out", &out]).status.code(), Some(2));
}

#[test]
fn failed_tolerance_exits_with_four_only_under_check() {
    let tmp = TempDir::new().unwrap();
    // A zero standard-error allowance cannot be met by a noisy estimate.
    let config = write_config(
        tmp.path(),
        r#"{
            "experiment": "limit-law",
            "limit_law": {"object": "stable-increment", "alpha": 1.5, "dt": 1.0, "se_multiple": 0.0},
            "run": {"replicates": 200, "seed": 5, "lambdas": [0.5]}
        }"#,
    );
    let out = out_arg(tmp.path(), "o");
    let checked = lab(&["limit-law", "--config", &config, "--check", "--out", &out]);
    assert_eq!(checked.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&checked.stdout).contains("FAIL"));
    let unchecked = lab(&["limit-law", "--config", &config, "--out", &out]);
    assert_eq!(unchecked.status.code(), Some(0));
}
