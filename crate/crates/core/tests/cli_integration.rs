//! End-to-end checks of the `sdm` binary: exit codes, report determinism
//! and the documented file formats.

use std::path::PathBuf;
use std::process::{Command, Output};

fn binary() -> PathBuf {
    let mut path = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    path.pop();
    path.pop();
    path.push("target");
    path.push(if cfg!(debug_assertions) {
        "debug"
    } else {
        "release"
    });
    path.push("sdm");
    path
}

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .output()
        .expect("binary runs")
}

fn tempfile(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("sdm-cli-tests");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

#[test]
fn solve_sdm_reports_m1() {
    let out = run(&["solve-sdm", "-i", &fixture("m1.json")]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let x = doc["solution"]["x"]["g1"].as_f64().unwrap();
    assert!((x - 40.0).abs() < 1e-9);
    let obj = doc["solution"]["objective"].as_f64().unwrap();
    assert!((obj - 318.0).abs() < 1e-6);
    assert!(doc["instance_sha256"].as_str().unwrap().len() == 64);
    assert!(doc["tolerances"]["feasibility"].as_f64().unwrap() > 0.0);
}

#[test]
fn reports_are_byte_identical() {
    let a = run(&["solve-sdm", "-i", &fixture("m1.json")]);
    let b = run(&["solve-sdm", "-i", &fixture("m1.json")]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);

    let a = run(&["solve-raslp", "-i", &fixture("m1_risk.json")]);
    let b = run(&["solve-raslp", "-i", &fixture("m1_risk.json")]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn malformed_json_exits_one() {
    let bad = tempfile("bad.json", "{this is not json");
    let out = run(&["solve-sdm", "-i", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse error"));
}

#[test]
fn infeasible_scenario_exits_two() {
    let text = std::fs::read_to_string(fixture("m1.json")).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["scenarios"][4]["demand"]["n1"] = serde_json::json!(100000.0);
    let path = tempfile("infeasible.json", &doc.to_string());
    let out = run(&["solve-sdm", "-i", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_intersection_exits_two() {
    let text = std::fs::read_to_string(fixture("m1.json")).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["risk"] = serde_json::json!({
        "g1": {"extreme_points": [[1.0, 0.0, 0.0, 0.0, 0.0]]},
        "iso": {"extreme_points": [[0.0, 0.0, 0.0, 0.0, 1.0]]},
    });
    let path = tempfile("disjoint.json", &doc.to_string());
    let out = run(&["solve-raslp", "-i", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("intersection"));
}

#[test]
fn recourse_profit_and_unknown_scenario() {
    let x = tempfile("x40.json", r#"{"x": {"g1": 40.0}}"#);
    let out = run(&[
        "recourse",
        "-i",
        &fixture("m1.json"),
        "--x",
        x.to_str().unwrap(),
        "--scenario",
        "w5",
    ]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((doc["lambda"]["n1"].as_f64().unwrap() - 13.0).abs() < 1e-8);
    assert!((doc["profits"]["g1"].as_f64().unwrap() - 120.0).abs() < 1e-7);

    let out = run(&[
        "recourse",
        "-i",
        &fixture("m1.json"),
        "--x",
        x.to_str().unwrap(),
        "--scenario",
        "nope",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn raslp_without_risk_block_exits_one() {
    let out = run(&["solve-raslp", "-i", &fixture("m1.json")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("risk block"));
}

#[test]
fn newsvendor_command() {
    let dist = tempfile(
        "dist.json",
        r#"{"support": [10, 20, 30, 40, 50], "probs": [0.2, 0.2, 0.2, 0.2, 0.2]}"#,
    );
    let out = run(&[
        "newsvendor",
        "--dist",
        dist.to_str().unwrap(),
        "--r-u",
        "3",
        "--r-v",
        "1",
        "--kappa",
        "0",
        "--beta",
        "0.5",
        "--mode",
        "no-trading",
    ]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((doc["quantile"].as_f64().unwrap() - 0.75).abs() < 1e-12);
    assert!((doc["x_star"].as_f64().unwrap() - 40.0).abs() < 1e-12);
    assert_eq!(doc["agree"], serde_json::json!(true));

    // kappa beyond 1/beta_bar is a domain error.
    let out = run(&[
        "newsvendor",
        "--dist",
        dist.to_str().unwrap(),
        "--r-u",
        "3",
        "--r-v",
        "1",
        "--kappa",
        "2.5",
        "--beta",
        "0.5",
        "--mode",
        "no-trading",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn equilibrium_verify_round_trip() {
    let sol_path = std::env::temp_dir()
        .join("sdm-cli-tests")
        .join("m1_solution.json");
    std::fs::create_dir_all(sol_path.parent().unwrap()).unwrap();
    let out = run(&[
        "solve-sdm",
        "-i",
        &fixture("m1_risk.json"),
        "--pref",
        "max",
        "-o",
        sol_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    // Risk-neutral verification of the SLP solution succeeds...
    let text = std::fs::read_to_string(fixture("m1_risk.json")).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["risk"] = serde_json::json!({
        "system": {"kappa": 0.0, "spectrum": [{"beta": 1.0, "weight": 1.0}]}
    });
    let neutral = tempfile("m1_neutral.json", &doc.to_string());
    let out = run(&[
        "equilibrium",
        "-i",
        neutral.to_str().unwrap(),
        "--verify",
        sol_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["converged"], serde_json::json!(true));

    // ...while the missing-risk-block case is a usage error.
    let out = run(&[
        "equilibrium",
        "-i",
        &fixture("m1.json"),
        "--verify",
        sol_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn check_properties_suites() {
    for suite in [
        "monotonicity",
        "corollary2",
        "coherence",
        "kkt",
        "cost-recovery",
    ] {
        let out = run(&[
            "check-properties",
            "-i",
            &fixture("m1.json"),
            "--suite",
            suite,
        ]);
        assert!(
            out.status.success(),
            "suite {suite}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(doc["pass"], serde_json::json!(true), "suite {suite}");
    }
    let out = run(&[
        "check-properties",
        "-i",
        &fixture("m1.json"),
        "--suite",
        "unknown",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("available"));
}

#[test]
fn check_properties_on_the_network_fixture() {
    for suite in ["kkt", "cost-recovery"] {
        let out = run(&[
            "check-properties",
            "-i",
            &fixture("six_node.json"),
            "--suite",
            suite,
        ]);
        assert!(
            out.status.success(),
            "suite {suite}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
