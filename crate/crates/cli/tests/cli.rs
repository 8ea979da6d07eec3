use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn mwm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mwm"))
        .args(args)
        .env_remove("MWM_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("json on stdout")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn mses(v: &Value) -> Vec<f64> {
    v["simulation"]["runs"].as_array().unwrap().iter().map(|r| r["mse"].as_f64().unwrap()).collect()
}

#[test]
fn enumerate_prints_k() {
    for (h, s, k) in [("4", "2", "K=11"), ("9", "3", "K=130"), ("2", "1", "K=3")] {
        let o = mwm(&["enumerate", "-H", h, "--max-shut", s]);
        assert!(o.status.success());
        assert_eq!(stdout(&o).trim(), k);
    }
}

#[test]
fn enumerate_writes_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.csv");
    let o = mwm(&["enumerate", "-H", "3", "--max-shut", "1", "--csv", p.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().collect::<Vec<_>>(), ["1,1,1", "1,1,0", "1,0,1", "0,1,1"]);
}

#[test]
fn config_errors_exit_2() {
    assert_eq!(mwm(&["enumerate", "-H", "1"]).status.code(), Some(2));
    assert_eq!(mwm(&["enumerate", "-H", "4", "--max-shut", "4"]).status.code(), Some(2));
    assert_eq!(mwm(&["optimize", "-H", "8", "--max-shut", "2"]).status.code(), Some(2));
    assert_eq!(mwm(&["simulate", "-H", "4"]).status.code(), Some(2));
    assert_eq!(mwm(&["simulate", "-H", "4", "--mu", "100,100,-5,100"]).status.code(), Some(2));
    assert_eq!(mwm(&["simulate", "-H", "4", "--mu", "100,100,100"]).status.code(), Some(2));
    assert_eq!(mwm(&["enumerate", "--config", "/nonexistent/m.json"]).status.code(), Some(2));
}

#[test]
fn bound_needs_two_combinations() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s.csv");
    std::fs::write(&s, "4\n").unwrap();
    let o = mwm(&["bound", "--theta", "500", "--sigma", s.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bound_sits_below_exact() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s.csv");
    std::fs::write(&s, "4,1,0\n1,9,2\n0,2,1\n").unwrap();
    let v = json(&mwm(&["bound", "--theta", "10,11,10.5", "--sigma", s.to_str().unwrap(), "--exact"]));
    assert!(v["lb_min"].as_f64().unwrap() <= v["exact_min"].as_f64().unwrap());
    assert_eq!(v["k"], 3);
    assert!(v["integration"]["tol"].is_number());
}

#[test]
fn indefinite_covariance_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s.csv");
    std::fs::write(&s, "1,2\n2,1\n").unwrap();
    let o = mwm(&["moments", "--theta", "1,2", "--sigma", s.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn moments_of_searched_five_hopper_setup() {
    let v = json(&mwm(&["moments", "-H", "5", "--mu", "203.7,191.0,178.6,110.9,55.7", "--seed", "1"]));
    let avg = v["extreme_avg"].as_f64().unwrap();
    assert!((avg - 537.7).abs() <= 0.5, "{avg}");
    assert_eq!(v["integration"]["seed"], 1);
}

#[test]
fn unreachable_target_exits_4() {
    let o = mwm(&["optimize", "-H", "4", "--frac", "0.1", "--starts", "2"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn report_round_trip_reproduces_mse() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let o = mwm(&[
        "optimize", "-H", "4", "--starts", "5", "--simulate", "--cycles", "5000", "--reps", "2", "--seed", "9", "-o",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stored = read_json(&report);
    assert_eq!(stored["combinations"], 11);
    assert_eq!(stored["report"]["options"]["rng_seed"], 9);
    assert!(stored["report"]["wall_time"].as_f64().unwrap() >= 0.0);
    let again = json(&mwm(&["simulate", "--from-report", report.to_str().unwrap()]));
    assert_eq!(mses(&stored), mses(&again));
    assert_eq!(again["simulation"]["options"]["seed"], 9);
}

#[test]
fn seed_flag_and_env_agree() {
    let a = json(&mwm(&["simulate", "-H", "4", "--mu", "270,250,240,66", "--cycles", "3000", "--seed", "42"]));
    let b = Command::new(env!("CARGO_BIN_EXE_mwm"))
        .args(["simulate", "-H", "4", "--mu", "270,250,240,66", "--cycles", "3000"])
        .env("MWM_SEED", "42")
        .output()
        .unwrap();
    let b = json(&b);
    assert_eq!(mses(&a), mses(&b));
    let c = json(&mwm(&["simulate", "-H", "4", "--mu", "270,250,240,66", "--cycles", "3000", "--seed", "43"]));
    assert_ne!(mses(&a), mses(&c));
}

#[test]
fn packages_are_all_above_target() {
    let dir = tempfile::tempdir().unwrap();
    let pk = dir.path().join("pk.csv");
    let v = json(&mwm(&[
        "simulate", "-H", "4", "--mu", "270,250,240,66", "--cycles", "2000", "--packages", pk.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&pk).unwrap();
    let weights: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(weights.len() as u64, v["simulation"]["runs"][0]["packages"].as_u64().unwrap());
    assert!(weights.iter().all(|w| *w > 500.0));
    assert!(v["simulation"]["runs"][0].get("package_weights").is_none());
}

#[test]
fn config_file_with_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m.json");
    std::fs::write(&cfg, r#"{"H":4,"T":500,"alpha":0.123,"max_shut":3,"exclude_all_open":false,"epsilon":1e-5,"f":0.6}"#)
        .unwrap();
    let o = mwm(&["enumerate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(stdout(&o).trim(), "K=15");
    let o = mwm(&["enumerate", "--config", cfg.to_str().unwrap(), "--max-shut", "2"]);
    assert_eq!(stdout(&o).trim(), "K=11");
    std::fs::write(&cfg, "{not json").unwrap();
    assert_eq!(mwm(&["enumerate", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn densities_csv() {
    let o = mwm(&["densities", "-H", "4", "--mu", "294.9,276.7,183.7,66.6", "--points", "11"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,X1,X2,X3,X4,X5,X6,X7,X8,X9,X10,X11,min,max");
    assert_eq!(lines.len(), 12);
}

#[test]
fn integral_table() {
    let o = mwm(&["table", "1", "--rows", "2,3,4"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("|           12 |   3"));
    assert!(text.contains("|          448 |   7"));
    assert!(text.contains("|       245760 |  15"));
    assert!(!text.contains("3.3286e10"));
    assert_eq!(mwm(&["table", "6"]).status.code(), Some(2));
}

#[test]
fn scaling_table_row() {
    let dir = tempfile::tempdir().unwrap();
    let j = dir.path().join("t5.json");
    let o = mwm(&[
        "table", "5", "--rows", "6(2)", "--starts", "3", "--reps", "2", "--cycles", "2000", "--json", j.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("6(2)   |  22 |"));
    let rows = read_json(&j);
    assert_eq!(rows.as_array().unwrap().len(), 1);
    assert_eq!(rows[0]["simulation"]["reps"], 2);
}
