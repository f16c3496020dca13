use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ghp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ghp")).args(args).output().expect("spawn ghp")
}

fn run(args: &[&str], out: &Path) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    let o = out.to_str().unwrap();
    all.extend(["--out", o]);
    ghp(&all)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_steady_scenario_settles() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--config", "s5-scenario1-steady.cfg", "--horizon", "4"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = json(&dir.path().join("scenario1-steady-summary.json"));
    let kkt = s["terminal_kkt"].as_f64().unwrap();
    assert!(kkt < 1e-4, "terminal KKT {kkt}");
    assert!(s["abort"].is_null());
    for f in ["scenario1-steady.csv", "scenario1-steady-summary.json", "config.toml", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["overrides"][0], "simulation.horizon_h=4.0");
}

#[test]
fn negative_resistance_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["simulate", "--config", "s5-scenario1-steady.cfg", "--set", "building.zones[2].envelope_resistance=-1.0"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("building.zones[2].envelope_resistance"), "{}", stderr(&o));
    assert!(!dir.path().join("scenario1-steady.csv").exists());
}

#[test]
fn unknown_key_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--config", "s5-scenario1-steady.cfg", "--set", "simulation.bogus=1"], dir.path());
    assert_eq!(code(&o), 2);
    let o = run(&["solve", "--config", "/nonexistent/x.cfg"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn override_is_recorded_and_rerun_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = run(
        &["simulate", "--config", "s5-scenario1-steady.cfg", "--horizon", "1", "--set", "controller.variant=decentralized"],
        &a,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = json(&a.join("manifest.json"));
    assert!(m["overrides"].as_array().unwrap().iter().any(|v| v == "controller.variant=decentralized"));
    let saved = std::fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(saved.contains("decentralized"));

    // the saved effective config reproduces the trace byte for byte
    let b = dir.path().join("b");
    let o = run(&["simulate", "--config", a.join("config.toml").to_str().unwrap()], &b);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(a.join("scenario1-steady.csv")).unwrap(), std::fs::read(b.join("scenario1-steady.csv")).unwrap());
    assert_eq!(m["config_sha256"], json(&b.join("manifest.json"))["config_sha256"]);
}

#[test]
fn identical_configs_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate", "--config", "s5-scenario2-steady.cfg", "--horizon", "0.5"];
    assert_eq!(code(&run(&args, &dir.path().join("a"))), 0);
    assert_eq!(code(&run(&args, &dir.path().join("b"))), 0);
    let a = std::fs::read(dir.path().join("a/scenario2-steady.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/scenario2-steady.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn agents_flag_matches_monolithic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["simulate", "--config", "s5-scenario2-steady.cfg", "--horizon", "0.2"];
    assert_eq!(code(&run(&base, &dir.path().join("m"))), 0);
    let mut with = base.to_vec();
    with.push("--agents");
    assert_eq!(code(&run(&with, &dir.path().join("a"))), 0);
    assert_eq!(std::fs::read(dir.path().join("m/scenario2-steady.csv")).unwrap(), std::fs::read(dir.path().join("a/scenario2-steady.csv")).unwrap());
}

#[test]
fn solve_joint_is_deterministic_and_in_box() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["solve", "--config", "s5-scenario2-steady.cfg", "--at-time", "2"];
    assert_eq!(code(&run(&args, &dir.path().join("a"))), 0);
    assert_eq!(code(&run(&args, &dir.path().join("b"))), 0);
    let a = std::fs::read(dir.path().join("a/scenario2-steady-solution.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b/scenario2-steady-solution.json")).unwrap());
    let v: Value = serde_json::from_slice(&a).unwrap();
    let ts = v["solution"]["point"]["supply"].as_f64().unwrap();
    assert!((38.0..=42.0).contains(&ts), "T_s {ts}");
    assert!(v["solution"]["kkt"]["summary"].as_f64().unwrap() < 1e-8);
}

#[test]
fn solve_without_energy_weight_tracks_setpoints() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--config", "s5-scenario1-steady.cfg", "--set", "controller.energy_weight.value=0.0"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&dir.path().join("scenario1-steady-solution.json"));
    let air = v["solution"]["point"]["air"].as_array().unwrap();
    for (t, want) in air.iter().zip([22.0, 21.0, 22.0, 20.0]) {
        assert!((t.as_f64().unwrap() - want).abs() < 1e-6);
    }
}

#[test]
fn verify_passes_on_steady_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--config", "s5-scenario1-steady.cfg", "--horizon", "4", "--samples", "200"], dir.path());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{stdout}{}", stderr(&o));
    let r = json(&dir.path().join("verify.json"));
    assert_eq!(r["passed"], true);
    assert!(r["checks"].as_array().unwrap().len() >= 5);
}

#[test]
fn verify_flags_supply_outside_cop_domain() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["verify", "--config", "s5-scenario1-steady.cfg", "--horizon", "0.5", "--samples", "10", "--set", "controller.supply.value=80.0"],
        dir.path(),
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL cop-domain"));
}

#[test]
fn compare_with_itself_has_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["compare", "--config", "s5-scenario1-steady.cfg", "--horizon", "1", "--variants", "full,full"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&dir.path().join("compare.json"));
    let rep = &r["comparisons"][0]["report"];
    assert_eq!(rep["energy_delta"].as_f64().unwrap(), 0.0);
    for g in rep["max_temperature_gap"].as_array().unwrap() {
        assert_eq!(g.as_f64().unwrap(), 0.0);
    }
    assert_eq!(rep["flow_variation_a"], rep["flow_variation_b"]);
    assert!(dir.path().join("compare-long.csv").exists());
}

#[test]
fn compare_rejects_unknown_variant() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["compare", "--config", "s5-scenario1-steady.cfg", "--variants", "full,turbo"], dir.path());
    assert_eq!(code(&o), 2);
}
