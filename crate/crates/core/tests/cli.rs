use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cpolymer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpolymer"))
        .args(args)
        .env_remove("CPOLYMER_BUDGET_NODES")
        .output()
        .expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().expect("json line")).expect("valid json")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn phase_point_r1() {
    let out = cpolymer(&["phase-point", "--model", "gaussian", "--beta", "0.3", "--gamma", "0.3", "--b", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    assert_eq!(v["generic"]["region"], "R1");
    assert_eq!(v["closed_form"]["region"], "R1");
    assert_eq!(v["agree"], true);
    assert!((v["generic"]["predicted_f"].as_f64().unwrap() - 0.693147).abs() < 1e-6);
    assert!(stderr(&out).contains("f = 0.693147"));
}

#[test]
fn phase_point_deterministic_limit() {
    let out = cpolymer(&["phase-point", "--beta", "0", "--gamma", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    assert_eq!(v["generic"]["region"], "R1");
    assert_eq!(v["generic"]["predicted_f"].as_f64().unwrap(), std::f64::consts::LN_2);
    assert_eq!(v["generic"]["alpha_min"], "inf");
}

#[test]
fn phase_point_r2() {
    let out = cpolymer(&["phase-point", "--beta", "1.5", "--gamma", "0.1", "--b", "2"]);
    let v = json_of(&out);
    assert_eq!(v["generic"]["region"], "R2a");
    assert!((v["generic"]["predicted_f"].as_f64().unwrap() - 1.766115).abs() < 1e-6);
    assert!((v["closed_form"]["predicted_f"].as_f64().unwrap() - 1.766115).abs() < 1e-6);
}

#[test]
fn phase_point_other_models() {
    let out = cpolymer(&["phase-point", "--model", "constant", "--c", "0,2"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    assert_eq!(v["generic"]["region"], "R1");
    assert!((v["generic"]["predicted_f"].as_f64().unwrap() - 4f64.ln()).abs() < 1e-12);

    let out = cpolymer(&["phase-point", "--model", "rademacher-phase", "--t", "0.5"]);
    assert_eq!(json_of(&out)["generic"]["region"], "R3");
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"model": "gaussian", "beta": 0.3, "gamma": 1.2}"#).unwrap();
    let out = cpolymer(&["phase-point", "--config", cfg.to_str().unwrap()]);
    assert_eq!(json_of(&out)["generic"]["region"], "R3");
    let out = cpolymer(&["phase-point", "--config", cfg.to_str().unwrap(), "--gamma", "0.3"]);
    assert_eq!(json_of(&out)["generic"]["region"], "R1");
}

#[test]
fn config_errors_exit_2() {
    assert_eq!(cpolymer(&["phase-point", "--b", "1"]).status.code(), Some(2));
    assert_eq!(cpolymer(&["phase-point", "--model", "cauchy"]).status.code(), Some(2));
    assert_eq!(cpolymer(&["diagram", "--grid", "1:0:3,0:1:3"]).status.code(), Some(2));
    assert_eq!(cpolymer(&["diagram", "--model", "constant", "--c", "1,0", "--grid", "0:1:2,0:1:2"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(cpolymer(&["phase-point", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(
        cpolymer(&["simulate", "--beta", "0.3", "--n", "30", "--replicas", "1"]).status.code(),
        Some(2),
        "budget"
    );
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn diagram_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = cpolymer(&["diagram", "--grid", "0:2:40,0:2:30", "--out", p.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&a.with_extension("ppm")), read(&b.with_extension("ppm")));
    let text = String::from_utf8(read(&a)).unwrap();
    assert!(text.contains("# beta_c=1.177410"));
    assert!(text.contains("# gamma_0=0.588705"));
    let rows = text.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 1 + 40 * 30);
    let ppm = read(&a.with_extension("ppm"));
    assert!(ppm.starts_with(b"P6\n40 30\n255\n"));
}

#[test]
fn diagram_single_cell_is_a_phase_point() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("one.csv");
    let out = cpolymer(&["diagram", "--grid", "0.3:0.3:1,0.3:0.3:1", "--out", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    assert_eq!(v["generic"]["region"], "R1");
}

#[test]
fn simulate_writes_a_row_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sim.csv");
    let t = dir.path().join("trace.csv");
    let args = [
        "simulate", "--beta", "0.3", "--gamma", "0.3", "--n", "8", "--replicas", "8", "--seed", "3", "--out",
        p.to_str().unwrap(), "--trace", t.to_str().unwrap(),
    ];
    let out = cpolymer(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let first = read(&p);
    let text = String::from_utf8(first.clone()).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("model,b,beta,gamma,n,replicas,seed,functional,mean"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "gaussian");
    assert_eq!(row[7], "free-energy");
    assert_eq!(row[13], "R1");
    let trace = String::from_utf8(read(&t)).unwrap();
    assert_eq!(trace.lines().count(), 9);
    // same seed, same bytes
    assert_eq!(cpolymer(&args).status.code(), Some(0));
    assert_eq!(read(&p), first);
}

#[test]
fn simulate_w_free_energy_on_unit_phases() {
    let out = cpolymer(&[
        "simulate", "--model", "lognormal-uniform", "--beta", "0", "--gamma", "1", "--n", "10", "--replicas", "2",
        "--functional", "w-free-energy",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let mean: f64 = row[8].parse().unwrap();
    assert!((mean - std::f64::consts::LN_2 / 2.0).abs() < 1e-12);
}

#[test]
fn verify_subset_passes() {
    let out = cpolymer(&["verify", "--only", "pz,critical"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("PASS pz"));
    assert!(text.contains("PASS critical"));
    assert!(!text.contains("oracle"));
}

#[test]
fn verify_catches_injected_fault() {
    let out = cpolymer(&["verify", "--only", "oracle", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().contains("FAIL oracle"));
    let clean = cpolymer(&["verify", "--only", "oracle"]);
    assert_eq!(clean.status.code(), Some(0));
}

#[test]
fn verify_default_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("verify.csv");
    let out = cpolymer(&["verify", "--seed", "1", "--out", p.to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert_eq!(text.lines().count(), 6);
    assert!(String::from_utf8(read(&p)).unwrap().starts_with("check,pass,detail"));
}

#[test]
fn budget_env_var_sets_only_the_default() {
    let out = Command::new(env!("CARGO_BIN_EXE_cpolymer"))
        .args(["simulate", "--n", "10", "--replicas", "2"])
        .env("CPOLYMER_BUDGET_NODES", "1000")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_cpolymer"))
        .args(["simulate", "--n", "10", "--replicas", "2", "--budget-nodes", "100000"])
        .env("CPOLYMER_BUDGET_NODES", "1000")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}
