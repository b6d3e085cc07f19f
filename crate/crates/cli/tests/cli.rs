//! End-to-end checks of the binary: exit codes, record shape, determinism,
//! and the trajectory table.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_impstab"))
}

fn write(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn golden_config() -> &'static str {
    r#"{
        "problem": "abstract",
        "system": {
            "state_dim": 1, "input_dim": 1, "times": [1.0],
            "flows": [[1.0]], "inputs": [[1.0]]
        },
        "weights": { "q": 1.0, "r": 1.0 },
        "solver": { "tol": 1e-12, "seed": 7 }
    }"#
}

fn record_of(output: &Output) -> Value {
    serde_json::from_slice(&output.stdout).expect("stdout is a JSON record")
}

#[test]
fn synthesize_golden_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "golden.json", golden_config());
    let out = bin().args(["synthesize", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let rec = record_of(&out);
    assert_eq!(rec["verdicts"]["stabilizable"], "true");
    let p = rec["scalars"]["p0_norm"].as_f64().unwrap();
    assert!((p - 1.618033988749895).abs() < 1e-8);
    let rho = rec["scalars"]["monodromy_radius"].as_f64().unwrap();
    assert!((rho - 0.3819660112501051).abs() < 1e-8);
}

#[test]
fn synthesize_not_stabilizable_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.json",
        r#"{
            "problem": "abstract",
            "system": {
                "state_dim": 1, "input_dim": 1, "times": [1.0],
                "flows": [[2.0]], "inputs": [[0.0]]
            },
            "weights": { "q": 1.0, "r": 1.0 }
        }"#,
    );
    let out = bin().args(["synthesize", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let rec = record_of(&out);
    assert_eq!(rec["verdicts"]["stabilizable"], "false");
}

#[test]
fn parse_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "broken.json", "{ not json");
    let out = bin().args(["synthesize", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(64));

    // Missing file.
    let out = bin().args(["synthesize", "--config", "/nonexistent.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(64));

    // Unknown flag.
    let out = bin().args(["synthesize", "--nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn dimension_mismatch_exits_64() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "dims.json",
        r#"{
            "problem": "abstract",
            "system": {
                "state_dim": 2, "input_dim": 1, "times": [1.0],
                "flows": [[1.0, 0.0, 0.0]], "inputs": [[1.0, 0.0]]
            }
        }"#,
    );
    let out = bin().args(["synthesize", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn records_are_deterministic_modulo_timing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "golden.json", golden_config());
    let mut records = Vec::new();
    for _ in 0..2 {
        let out = bin().args(["synthesize", "--config"]).arg(&cfg).output().unwrap();
        let mut rec = record_of(&out);
        rec.as_object_mut().unwrap().remove("timing_ms");
        records.push(serde_json::to_string(&rec).unwrap());
    }
    assert_eq!(records[0], records[1]);
}

#[test]
fn trajectory_csv_has_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "golden.json", golden_config());
    let csv = dir.path().join("traj.csv");
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--csv")
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let table = std::fs::read_to_string(&csv).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "j,t_j,norm_pre,norm_post");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 30); // default simulation length, one slot per period
    let first: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(first[0], "1");
    // Norms contract along the golden closed loop.
    let n1: f64 = first[3].parse().unwrap();
    let last: Vec<&str> = rows[29].split(',').collect();
    let n30: f64 = last[3].parse().unwrap();
    assert!(n30 < n1);
}

#[test]
fn check_obs_modes_and_steering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "obs.json",
        r#"{
            "problem": "abstract",
            "system": {
                "state_dim": 1, "input_dim": 1, "times": [1.0],
                "flows": [[2.0]], "inputs": [[1.0]]
            },
            "task": {
                "sigma": 0.5, "horizon_slots": 3, "range": "exclude-final",
                "steer": true, "steer_periods": 2, "eps": 1e-6
            }
        }"#,
    );
    let out = bin().args(["check-obs", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let rec = record_of(&out);
    let c_search = rec["scalars"]["c_search"].as_f64().unwrap();
    assert!((c_search - 7.5 / 20f64.sqrt()).abs() < 1e-6);
    let c_suff = rec["scalars"]["c_sufficient"].as_f64().unwrap();
    assert!(c_suff >= c_search);
    let achieved = rec["scalars"]["steer_achieved_norm"].as_f64().unwrap();
    let target = rec["scalars"]["steer_target"].as_f64().unwrap();
    assert!(achieved <= target + 1e-8);

    // Search-only mode drops the certificate from the record.
    let out = bin()
        .args(["check-obs", "--mode", "search", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    let rec = record_of(&out);
    assert!(rec["scalars"].get("c_sufficient").is_none());
}

#[test]
fn check_obs_infeasible_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "obs.json",
        r#"{
            "problem": "abstract",
            "system": {
                "state_dim": 1, "input_dim": 1, "times": [1.0],
                "flows": [[2.0]], "inputs": [[0.0]]
            },
            "task": { "sigma": 0.5, "horizon_slots": 2 }
        }"#,
    );
    let out = bin().args(["check-obs", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let rec = record_of(&out);
    assert_eq!(rec["verdicts"]["feasible"], "false");
}

#[test]
fn heat_analyze_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "heat.json",
        r#"{
            "problem": "heat",
            "heat": {
                "components": 2, "input_count": 1, "modes": 6,
                "coupling": [2.0, 0.0, 0.0, 2.0],
                "inputs": [[1.0, 0.0]],
                "windows": [[0.2, 2.9]],
                "times": [0.3]
            },
            "weights": { "q": 1.0, "r": 1.0 },
            "solver": { "tol": 1e-9 }
        }"#,
    );
    let out = bin().args(["heat-analyze", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let rec = record_of(&out);
    assert_eq!(rec["verdicts"]["stabilizable"], "false");
    assert_eq!(rec["scalars"]["witness_re"].as_f64().unwrap(), 2.0);
    assert_eq!(rec["scalars"]["kalman_rank"].as_f64().unwrap(), 1.0);
}

#[test]
fn battery_small_run_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "battery.json",
        r#"{
            "problem": "abstract",
            "solver": { "seed": 1 },
            "battery": { "count": 9 }
        }"#,
    );
    let outfile = dir.path().join("record.json");
    let out = bin()
        .args(["battery", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&outfile)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let rec: Value = serde_json::from_str(&std::fs::read_to_string(&outfile).unwrap()).unwrap();
    assert_eq!(rec["verdicts"]["all_agree"], "true");
    assert_eq!(rec["scalars"]["count"].as_f64().unwrap(), 9.0);

    // Empty battery: empty record, success.
    let cfg0 = write(
        dir.path(),
        "battery0.json",
        r#"{ "problem": "abstract", "battery": { "count": 0 } }"#,
    );
    let out = bin().args(["battery", "--config"]).arg(&cfg0).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn simulate_with_explicit_feedback() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "explicit.json",
        r#"{
            "problem": "abstract",
            "system": {
                "state_dim": 1, "input_dim": 1, "times": [1.0],
                "flows": [[1.0]], "inputs": [[1.0]],
                "feedback": [[-0.6180339887498949]]
            },
            "task": { "periods": 20 }
        }"#,
    );
    let out = bin().args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let rec = record_of(&out);
    assert_eq!(rec["verdicts"]["decaying"], "true");
    let rho = rec["scalars"]["monodromy_radius"].as_f64().unwrap();
    assert!((rho - 0.3819660112501051).abs() < 1e-12);
}

#[test]
fn help_exits_0() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}
