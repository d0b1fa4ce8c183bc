use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SCENARIO: &str = "\
seed = 1
vehicle_count = 15
sim_duration = 60.0
warm_up = 20.0

[workload]
packet_count = 10
";

fn rcms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcms"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario(dir: &Path, text: &str) -> String {
    let path = dir.join("scenario.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn validate_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = scenario(dir.path(), SCENARIO);
    assert_eq!(rcms(&["validate", "--scenario", &good]).status.code(), Some(0));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "vehicle_count = 0\n").unwrap();
    let out = rcms(&["validate", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vehicle_count"));

    fs::write(&bad, "max_sped = 20.0\n").unwrap();
    assert_eq!(rcms(&["validate", "--scenario", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(rcms(&["validate", "--scenario", "/nonexistent.toml"]).status.code(), Some(2));
}

#[test]
fn run_writes_identical_outputs_for_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), SCENARIO);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = rcms(&["run", "--scenario", &sc, "--seed", "5", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["events.log", "metrics.csv"] {
        let x = fs::read(a.join(file)).unwrap();
        assert_eq!(x, fs::read(b.join(file)).unwrap(), "{file} differs");
    }
    let log = fs::read_to_string(a.join("events.log")).unwrap();
    assert!(log.starts_with("time,event_kind,vehicle_id,region_id,detail\n"));
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("tick,scheme,seed,metric,value\n"));
    assert!(metrics.lines().skip(1).all(|l| l.split(',').nth(2) == Some("5")));
}

#[test]
fn trained_run_writes_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SCENARIO}\n[srp]\nmode = \"train\"\nepochs = 2\n");
    let sc = scenario(dir.path(), &text);
    let out = dir.path().join("out");
    let o = rcms(&["run", "--scenario", &sc, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("checkpoint.txt").is_file());
}

#[test]
fn sweep_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), SCENARIO);
    let out = dir.path().join("sweep");
    let o = rcms(&[
        "sweep",
        "--scenario",
        &sc,
        "--axis",
        "max_speed",
        "--values",
        "15,20,25",
        "--seeds",
        "0..5",
        "--schemes",
        "rcms,vmasc_like",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 30);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("axis,value,scheme,metric,n,mean,ci_low,ci_high\n"));

    let plots = dir.path().join("plots");
    let o = rcms(&[
        "plot",
        "--summary",
        out.join("summary.csv").to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let svg = fs::read_to_string(plots.join("mean_lifetime.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("rcms") && svg.contains("vmasc_like"));
}

#[test]
fn bad_sweep_arguments_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), SCENARIO);
    let out = dir.path().join("x");
    let o = rcms(&["sweep", "--scenario", &sc, "--axis", "max_speed", "--values", "fast", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = rcms(&[
        "sweep", "--scenario", &sc, "--axis", "max_speed", "--values", "20", "--schemes", "aodv", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
