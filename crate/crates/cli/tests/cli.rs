use std::process::{Command, Output};

use serde_json::Value;

fn froglab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_froglab"))
        .args(args)
        .env_remove("FROGLAB_SEED")
        .output()
        .expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("valid JSON on stdout")
}

#[test]
fn poly_prints_p3() {
    let out = froglab(&["poly", "--family", "P", "--k", "3"]);
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap().trim(),
        "P3 = z3^3 - z1*z3^2 - 2*z2^2*z3 + 2*z1*z2*z3"
    );
    let q = json_of(&froglab(&["poly", "--family", "Q", "--k", "3", "--format", "json"]));
    assert_eq!(q["body"]["text"], "Q3 = z3^3 - z2^2*z3");
    assert_eq!(q["header"]["schema_version"], 1);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(froglab(&["poly", "--family", "P", "--k", "3", "--bogus"]).status.code(), Some(2));
    assert_eq!(froglab(&["frobnicate"]).status.code(), Some(2));
    let bad_p = froglab(&["simulate", "--model", "sfm", "--d", "3", "--p", "0.7", "--depth", "4", "--reps", "10"]);
    assert_eq!(bad_p.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_p.stderr).contains("p"));
    let bad_x = froglab(&[
        "simulate", "--model", "sfm", "--d", "3", "--p", "0.1", "--depth", "4", "--reps", "10", "--x-grid", "0.5,1.5",
    ]);
    assert_eq!(bad_x.status.code(), Some(2));
    assert_eq!(froglab(&["params", "--d", "1", "--p", "0.1"]).status.code(), Some(2));
}

#[test]
fn params_reports_transformed_probability() {
    let v = json_of(&froglab(&["params", "--d", "3", "--p", "0.3333333333333333"]));
    let b = &v["body"];
    assert!((b["pstar"].as_f64().unwrap() - 0.4).abs() < 1e-12);
    assert!((b["rho"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(b["c_maps"].as_array().unwrap().len(), 3);
}

#[test]
fn simulate_bodies_are_reproducible() {
    let args = ["simulate", "--model", "sfm", "--d", "3", "--p", "0.2", "--depth", "6", "--reps", "3000", "--seed", "9"];
    let a = json_of(&froglab(&args));
    let b = json_of(&froglab(&args));
    assert_eq!(a["body"].to_string(), b["body"].to_string());
    let per_x = a["body"]["per_x"].as_array().unwrap();
    assert_eq!(per_x.len(), 4);
    assert!(a["body"]["event_rates"]["d1"].as_f64().is_some());
    let other = json_of(&froglab(&[
        "simulate", "--model", "sfm", "--d", "3", "--p", "0.2", "--depth", "6", "--reps", "3000", "--seed", "10",
    ]));
    assert_ne!(a["body"].to_string(), other["body"].to_string());
}

#[test]
fn seed_flag_overrides_environment() {
    let base = ["estimate-pgf", "--model", "nbfm", "--d", "2", "--p", "0.3", "--depth", "6", "--reps", "500"];
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_froglab"));
        c.args(base).args(extra).env_remove("FROGLAB_SEED");
        if let Some(s) = env {
            c.env("FROGLAB_SEED", s);
        }
        let v: Value = serde_json::from_slice(&c.output().unwrap().stdout).unwrap();
        (v["body"]["config"]["seed"].as_u64().unwrap(), v["body"].to_string())
    };
    assert_eq!(run(None, &[]).0, 0);
    assert_eq!(run(Some("5"), &[]).0, 5);
    assert_eq!(run(Some("5"), &["--seed", "6"]).0, 6);
    assert_eq!(run(Some("6"), &[]).1, run(None, &["--seed", "6"]).1);
}

#[test]
fn vanishing_check_and_failure_exit() {
    let ok = froglab(&["check", "--name", "vanishing"]);
    assert!(ok.status.success());
    let v = json_of(&ok);
    assert_eq!(v["body"]["pass"], true);
    assert_eq!(v["body"]["details"]["first_n"], 29);
    let never = froglab(&["check", "--name", "vanishing", "--tol", "0", "--n-max", "20"]);
    assert_eq!(never.status.code(), Some(1));
}

#[test]
fn coupling_and_iterate_csv() {
    let out = froglab(&["coupling", "--d", "2", "--p", "0.3333333", "--depth", "4", "--reps", "50", "--seed", "1"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("replicate,k1_or_root,steps_used"));
    assert_eq!(lines.count(), 50);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let out = froglab(&[
        "iterate", "--d", "2", "--p", "0.3333333333333333", "--n", "3", "--grid-size", "8",
        "--out", path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["n", "x", "value"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4 * 8);
    // A_2 1(0) = 2/3
    assert!((rows[8][2].parse::<f64>().unwrap() - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn verify_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let args = [
        "verify", "--suite", "self-consistency", "--d", "2", "--p", "0.2", "--reps", "4000", "--depth", "6",
        "--seed", "3", "--out", path.to_str().unwrap(),
    ];
    let out = froglab(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(first["body"]["suite_pass"]["self-consistency"], true);
    assert!(first["header"]["runtimes"]["self-consistency"].as_f64().is_some());
    froglab(&args);
    let second: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(first["body"].to_string(), second["body"].to_string());
}
