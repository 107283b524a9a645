//! Black-box checks of the scenario runner binary: exit codes, artifact
//! determinism and subcommand/task matching.

use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bohl"))
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn simulate_identity_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    write(
        &scenario,
        r#"{
            "schema": "bohl/scenario/v1",
            "system": {"dim": 2, "horizon": 10, "rule": {"kind": "identity"}},
            "task": {"kind": "simulate", "x0": [["1", "0"]]}
        }"#,
    );
    let out = dir.path().join("out");
    let status = bin()
        .args(["simulate", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(out.join("solution.csv")).unwrap();
    assert!(csv.starts_with("target,n,log_norm,norm"));
    // Identity: the norm column stays exactly 1.
    for line in csv.lines().skip(1) {
        assert!(line.ends_with(",0,1"), "line: {line}");
    }
}

#[test]
fn dichotomy_scenario_reports_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    write(
        &scenario,
        r#"{
            "schema": "bohl/scenario/v1",
            "seed": 3,
            "system": {
                "dim": 2, "horizon": 512,
                "rule": {"kind": "constant", "matrix": [["0.36787944117144233", "0"], ["0", "2.718281828459045"]]}
            },
            "task": {"kind": "dichotomy"}
        }"#,
    );
    let out = dir.path().join("out");
    let status = bin()
        .args(["dichotomy", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(out.join("verdicts.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["splitting_found"], true);
    assert_eq!(v["ed"]["holds"], true);
    let alpha = v["ed"]["alpha"].as_f64().unwrap();
    assert!((alpha - 1.0).abs() < 1e-3, "alpha {alpha}");
}

#[test]
fn validation_error_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    // Randomized task without a seed.
    write(
        &scenario,
        r#"{
            "schema": "bohl/scenario/v1",
            "system": {"dim": 2, "horizon": 64, "rule": {"kind": "identity"}},
            "task": {"kind": "dichotomy"}
        }"#,
    );
    let status = bin()
        .args(["dichotomy", "--scenario"])
        .arg(&scenario)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn subcommand_task_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    write(
        &scenario,
        r#"{
            "schema": "bohl/scenario/v1",
            "system": {"dim": 2, "horizon": 10, "rule": {"kind": "identity"}},
            "task": {"kind": "simulate", "x0": [["1", "0"]]}
        }"#,
    );
    let status = bin()
        .args(["exponents", "--scenario"])
        .arg(&scenario)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn surrogate_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    // Pipeline on a system with an exponential dichotomy: hypothesis fails.
    write(
        &scenario,
        r#"{
            "schema": "bohl/scenario/v1",
            "seed": 5,
            "system": {
                "dim": 2, "horizon": 256,
                "rule": {"kind": "constant", "matrix": [["0.36787944117144233", "0"], ["0", "2.718281828459045"]]}
            },
            "task": {"kind": "perturb", "method": {
                "kind": "no_bd_pipeline", "eps": 0.2,
                "splitting": {"basis1": [["1", "0"]], "basis2": [["0", "1"]]}
            }}
        }"#,
    );
    let status = bin()
        .args(["perturb", "--scenario"])
        .arg(&scenario)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn identical_seed_byte_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    write(
        &scenario,
        r#"{
            "schema": "bohl/scenario/v1",
            "seed": 11,
            "system": {
                "dim": 2, "horizon": 128,
                "rule": {"kind": "gap_instance"}
            },
            "task": {"kind": "exponents", "space": true, "vectors": [["1", "1"]]}
        }"#,
    );
    let (o1, o2) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&o1, &o2] {
        let status = bin()
            .args(["exponents", "--scenario"])
            .arg(&scenario)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = fs::read(o1.join("estimates.csv")).unwrap();
    let b = fs::read(o2.join("estimates.csv")).unwrap();
    assert_eq!(a, b);
}
