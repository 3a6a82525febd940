use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seasonal-cusum"))
        .args(args)
        .env("SEASONAL_CUSUM_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: PathBuf) -> Value {
    serde_json::from_slice(&std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    /// Synthetic data with a fitted model, trained up to 2017-10-01.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Fixture { _dir: dir, root };
        ok(&["synth", "--start", "2016-01-04", "--end", "2018-02-28", "--seed", "2", "--out", &f.p("data")]);
        ok(&[
            "fit", "--daily", &f.p("data/daily.csv"), "--slots", &f.p("data/slots.csv"), "--holidays", &f.p("data/holidays.txt"),
            "--split-date", "2017-10-01", "--out", &f.p("fit"),
        ]);
        f
    }

    fn p(&self, rel: &str) -> String {
        self.root.join(rel).to_string_lossy().into_owned()
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

#[test]
fn unit_budget_gives_unit_threshold() {
    let f = Fixture::new();
    ok(&[
        "calibrate", "--model", &f.p("fit/model.json"), "--rho", "1.3", "--pi", "1", "--mode", "event", "--replications", "200",
        "--horizon-days", "7", "--out", &f.p("cal"),
    ]);
    let cal = json(f.path("cal/calibration.json"));
    assert!(cal["calibration"]["threshold_m"].as_f64().unwrap() <= 1.0, "{cal}");
    let manifest = json(f.path("cal/manifest.json"));
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["command"], "calibrate");
    assert!(!manifest["seeds"].as_array().unwrap().is_empty());
}

#[test]
fn simulated_output_feeds_detection() {
    let f = Fixture::new();
    let model = f.p("fit/model.json");
    ok(&["simulate", "--model", &model, "--start", "2018-01-08", "--end", "2018-01-19", "--theta", "2018-01-15", "--rho", "1.5", "--seed", "3", "--out", &f.p("sim")]);
    ok(&["detect", "--model", &model, "--series", &f.p("sim/slots.csv"), "--rho", "1.5", "--m", "10", "--out", &f.p("det")]);
    let vpath = std::fs::read_to_string(f.path("det/vpath.csv")).unwrap();
    let mut lines = vpath.lines();
    assert_eq!(lines.next(), Some("timestamp,v,lambda_increment,count,alarm_flag"));
    // Ten weekdays and one Saturday.
    assert_eq!(lines.count(), 10 * 22 + 10);
    let alarms = std::fs::read_to_string(f.path("det/alarms.jsonl")).unwrap();
    let alarms: Vec<Value> = alarms.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(alarms.iter().all(|a| a["v_at_alarm"].as_f64().unwrap() >= 10.0));
    assert!(alarms.iter().any(|a| a["time"].as_str().unwrap() >= "2018-01-15"), "the change is detected");
}

#[test]
fn exit_codes_follow_the_contract() {
    let f = Fixture::new();
    let model = f.p("fit/model.json");
    // Input errors.
    let missing = bin(&["detect", "--model", &f.p("nope.json"), "--series", &f.p("data/slots.csv"), "--rho", "1.3", "--m", "5", "--out", &f.p("x")]);
    assert_eq!(missing.status.code(), Some(2));
    let bad_rho = bin(&["detect", "--model", &model, "--series", &f.p("data/slots.csv"), "--rho", "1", "--m", "5", "--out", &f.p("x")]);
    assert_eq!(bad_rho.status.code(), Some(2));
    // Exactly one of --m and --pi.
    let both = bin(&["detect", "--model", &model, "--series", &f.p("data/slots.csv"), "--rho", "1.3", "--m", "5", "--pi", "100", "--out", &f.p("x")]);
    assert_eq!(both.status.code(), Some(2));
    let neither = bin(&["detect", "--model", &model, "--series", &f.p("data/slots.csv"), "--rho", "1.3", "--out", &f.p("x")]);
    assert_eq!(neither.status.code(), Some(2));
    // Numeric failure: the budget cannot be reached within the horizon.
    let short = bin(&["calibrate", "--model", &model, "--rho", "1.3", "--pi", "1e9", "--replications", "100", "--horizon-days", "2", "--out", &f.p("x")]);
    assert_eq!(short.status.code(), Some(3), "{}", String::from_utf8_lossy(&short.stderr));
    // Alarms are data, not failures.
    ok(&["detect", "--model", &model, "--series", &f.p("data/slots.csv"), "--rho", "1.3", "--m", "0.5", "--out", &f.p("noisy")]);
}

#[test]
fn fit_without_slots_warns_and_falls_back_to_uniform() {
    let f = Fixture::new();
    let out = ok(&["fit", "--daily", &f.p("data/daily.csv"), "--holidays", &f.p("data/holidays.txt"), "--out", &f.p("daily-only")]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("uniform"), "{stderr}");
    let report = json(f.path("daily-only/fit_report.json"));
    assert!(report["warning"].as_str().unwrap().contains("uniform"));
    let model = json(f.path("daily-only/model.json"));
    let fractions = model["model"]["profile"]["weekday_fractions"].as_array().unwrap();
    assert!(fractions.iter().all(|x| (x.as_f64().unwrap() - 1.0 / 22.0).abs() < 1e-15));
}

#[test]
fn empty_training_set_is_an_input_error() {
    let f = Fixture::new();
    let out = bin(&["fit", "--daily", &f.p("data/daily.csv"), "--split-date", "2016-01-04", "--out", &f.p("x")]);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "date,count\n").unwrap();
    let out = bin(&["fit", "--daily", empty.to_str().unwrap(), "--out", &f.p("y")]);
    assert_eq!(out.status.code(), Some(2));
}

fn selected(dir: &Path) -> Vec<String> {
    let model = json(dir.join("model.json"));
    model["model"]["daily"]["factor_spec"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_owned()).collect()
}

#[test]
fn fit_recovers_the_generating_factors() {
    let dir = tempfile::tempdir().unwrap();
    let truth = ["trend", "month", "day_of_week", "day_after_holiday"];
    let mut hits = 0;
    for seed in 0..50u64 {
        let data = dir.path().join(format!("d{seed}"));
        let fit = dir.path().join(format!("f{seed}"));
        let s = |p: &Path| p.to_string_lossy().into_owned();
        let code = seasonal_cusum::cli::run([
            "seasonal-cusum", "synth", "--start", "2016-01-04", "--end", "2017-09-30", "--seed", &seed.to_string(), "--out", &s(&data),
        ]);
        assert_eq!(code, 0);
        let code = seasonal_cusum::cli::run([
            "seasonal-cusum", "fit", "--daily", &s(&data.join("daily.csv")), "--holidays", &s(&data.join("holidays.txt")),
            "--out", &s(&fit),
        ]);
        assert_eq!(code, 0);
        hits += usize::from(selected(&fit) == truth);
    }
    assert!(hits >= 45, "{hits}/50");
}

#[test]
fn stronger_change_evaluates_to_shorter_delay() {
    let f = Fixture::new();
    let model = f.p("fit/model.json");
    let delay = |rho: &str, out: &str| {
        ok(&[
            "evaluate", "--model", &model, "--rho", rho, "--m", "8", "--mode", "event", "--theta", "2018-01-10T10:00",
            "--start", "2018-01-08", "--end", "2018-01-19", "--delay-replications", "300", "--seed", "7", "--out", &f.p(out),
        ]);
        let report = json(f.path(&format!("{out}/delay_report.json")));
        assert!(std::fs::read_to_string(f.path(&format!("{out}/delay_table.csv"))).unwrap().starts_with("theta,"));
        report["report"]["worst_case_delay_events"].as_f64().unwrap()
    };
    let slow = delay("1.5", "e15");
    let fast = delay("10", "e10");
    assert!(fast < slow, "{fast} vs {slow}");
}

#[test]
fn postponed_tuesdays_trip_both_sides() {
    let f = Fixture::new();
    ok(&[
        "detect", "--model", &f.p("fit/model.json"), "--series", &f.p("data/slots.csv"), "--rho", "1.5", "--m", "12", "--double-sided",
        "--scenario", "postpone-third-tuesday", "--out", &f.p("det"),
    ]);
    assert!(f.path("det/vpath_up.csv").exists() && f.path("det/vpath_down.csv").exists());
    let alarms: Vec<Value> = std::fs::read_to_string(f.path("det/alarms.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let on = |dir: &str| alarms.iter().filter(|a| a["direction"] == dir).count();
    assert!(on("decrease") > 0 && on("increase") > 0);
}
