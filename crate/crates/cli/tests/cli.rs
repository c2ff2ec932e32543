use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use uavcast::evaluate::read_sweep_csv;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uavcast"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn scenario_file(dir: &Path, users: &str, period: f64) -> String {
    let path = dir.join("scenario.toml");
    fs::write(
        &path,
        format!(
            "altitude_m = 100.0\nperiod_s = {period}\nspeed_mps = 20.0\npower_ave_dbm = 30.0\n\
             beta0_db = -30.0\nnoise_dbm = -50.0\nusers = {users}\n"
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_owned()
}

fn summary_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing from summary"))
        .parse()
        .unwrap()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["gen", "--seed", "7", "--k", "10", "--area", "1000x1000", "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
    }
    let fa = fs::read(a.join("scenario.toml")).unwrap();
    assert_eq!(fa, fs::read(b.join("scenario.toml")).unwrap());
    let s = uavcast::scenario::Scenario::load(a.join("scenario.toml")).unwrap();
    assert_eq!(s.num_users(), 10);
    assert!(s.validate().is_ok());
}

#[test]
fn gen_rejects_bad_arguments() {
    let o = run(&["gen", "--k", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("K must be at least 1"));
    assert_eq!(run(&["gen", "--k", "3", "--area", "10by10"]).status.code(), Some(2));
    assert_eq!(run(&["gen", "--k", "3", "--area", "-5x10"]).status.code(), Some(2));
}

#[test]
fn single_user_schemes_coincide() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_file(dir.path(), "[[50.0, 50.0]]", 300.0);
    let out = dir.path().join("run");
    let o = run(&["solve", &scenario, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.toml")).unwrap();
    for key in ["eta_static", "eta_equal", "eta_joint", "eta_star"] {
        assert!((summary_value(&summary, key) - 3.4594).abs() < 1e-4, "{key}");
    }
    assert_eq!(summary_value(&summary, "gamma"), 1.0);
    assert!(summary.contains("duality_gap"));
    assert!(summary.contains("relaxed_converged = true"));
}

#[test]
fn two_users_beat_static_hovering() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_file(dir.path(), "[[-500.0, 0.0], [500.0, 0.0]]", 200.0);
    let out = dir.path().join("run");
    let o = run(&["solve", &scenario, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.toml")).unwrap();
    assert!((summary_value(&summary, "eta_static") - 0.4695).abs() < 1e-4);
    assert!(summary_value(&summary, "eta_joint") > summary_value(&summary, "eta_static"));
    for name in ["hover_plan.toml", "flight_plan.toml", "allocation.toml", "evaluation.toml", "trajectory.csv"] {
        assert!(out.join(name).exists(), "{name}");
    }

    // The written artifacts certify with the evaluator.
    let o = run(&[
        "eval",
        &scenario,
        "--flight",
        out.join("flight_plan.toml").to_str().unwrap(),
        "--allocation",
        out.join("allocation.toml").to_str().unwrap(),
        "--dt",
        "0.01",
    ]);
    assert!(o.status.success());
    let report = String::from_utf8(o.stdout).unwrap();
    let min_rate = summary_value(&report, "min_rate");
    assert!((min_rate - summary_value(&summary, "eta_joint")).abs() < 1e-3);
    assert!(!report.contains("exceeded"));
    let o = run(&["eval", &scenario, "--plan", out.join("hover_plan.toml").to_str().unwrap()]);
    assert!(o.status.success());
}

#[test]
fn missing_file_exits_2() {
    assert_eq!(run(&["solve", "/definitely/not/here.toml"]).status.code(), Some(2));
    assert_eq!(run(&["eval", "/definitely/not/here.toml", "--plan", "x"]).status.code(), Some(2));
}

#[test]
fn malformed_scenario_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "altitude_m = \"high\"\n").unwrap();
    assert_eq!(run(&["solve", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn short_period_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_file(dir.path(), "[[-500.0, 0.0], [500.0, 0.0]]", 20.0);
    let o = run(&["solve", &scenario, "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("T < T_fly"));
}

#[test]
fn sweep_writes_one_row_per_period() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_file(dir.path(), "[[-500.0, 0.0], [500.0, 0.0], [0.0, 400.0]]", 300.0);
    let o = run(&["sweep", &scenario, "--t-list", "150,300,600"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("T,eta_static,eta_equal,eta_joint,eta_star\n"));
    let rows = read_sweep_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!(r.eta_static <= r.eta_equal + 1e-7);
        assert!(r.eta_equal <= r.eta_joint + 1e-7);
        assert!(r.eta_joint <= r.eta_star + 1e-7);
    }
}

#[test]
fn sweep_skips_short_periods() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_file(dir.path(), "[[-500.0, 0.0], [500.0, 0.0]]", 300.0);
    let out = dir.path().join("sweep");
    let o = run(&["sweep", &scenario, "--t-list", "10,300", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("skipping T = 10"));
    let rows = read_sweep_csv(fs::File::open(out.join("sweep.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].period, 300.0);
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_file(
        dir.path(),
        "[[120.0, 40.0], [610.0, 300.0], [380.0, 880.0], [900.0, 700.0], [50.0, 560.0]]",
        300.0,
    );
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("run{threads}"));
        let o = bin()
            .env("PLANNER_THREADS", threads)
            .args(["solve", &scenario, "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(o.status.success());
        let files: Vec<Vec<u8>> = ["summary.toml", "hover_plan.toml", "allocation.toml", "trajectory.csv"]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn bad_thread_count_exits_2() {
    let o = bin().env("PLANNER_THREADS", "zero").args(["gen", "--k", "2"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn benchmarks_print_toml() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_file(dir.path(), "[[-500.0, 0.0], [500.0, 0.0]]", 300.0);
    let o = run(&["bench-static", &scenario]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!((summary_value(&text, "eta") - 0.4695).abs() < 1e-4);
    let o = run(&["bench-equal", &scenario]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(summary_value(&text, "eta") > 0.4695);
}
