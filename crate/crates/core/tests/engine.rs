use std::collections::BTreeSet;

use rcms::engine::{run, sweep, Axis, RunStatus, Scenario, SweepSpec};
use rcms::events::{EventKind, EventLog};
use rcms::metrics::MetricLedger;

fn small(seed: u64, vehicles: usize) -> Scenario {
    let mut sc = Scenario::default();
    sc.seed = seed;
    sc.vehicle_count = vehicles;
    sc.sim_duration = 150.0;
    sc.workload.packet_count = 20;
    sc
}

#[test]
fn same_seed_same_bytes() {
    let sc = small(11, 40);
    let outputs: Vec<(String, String)> = (0..3)
        .map(|_| {
            let out = run(&sc).unwrap();
            (out.log.to_text(), out.metrics_csv("rcms", sc.seed))
        })
        .collect();
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));

    let other = run(&small(12, 40)).unwrap();
    assert_ne!(other.log.to_text(), outputs[0].0);
}

#[test]
fn single_vehicle_becomes_a_lone_core() {
    let mut sc = small(3, 1);
    sc.workload.packet_count = 0;
    let out = run(&sc).unwrap().into_result().unwrap();
    let created: Vec<_> = out
        .log
        .events()
        .iter()
        .filter(|e| e.kind == EventKind::RegionCreated)
        .collect();
    assert_eq!(created.len(), 1);
    assert!(created[0].time < sc.warm_up);
    assert!(out.log.events().iter().all(|e| e.kind != EventKind::RegionDissolved));
    assert_eq!(out.ledger.reconstruction_count(), 0);
    assert_eq!(out.ledger.mean_overlap(), Some(0.0));
}

#[test]
fn twenty_vehicle_smoke_runs_hold_the_validators() {
    for seed in 0..3 {
        let sc = small(seed, 20);
        let out = run(&sc).unwrap();
        assert!(out.violations.is_empty(), "seed {seed}: {:?}", &out.violations[..1]);
        let ticks: Vec<_> = out
            .log
            .events()
            .iter()
            .filter(|e| e.kind == EventKind::Tick && e.time >= sc.warm_up)
            .collect();
        assert!(!ticks.is_empty());
        for t in ticks {
            let regions = t.num("regions").unwrap();
            assert!((1.0..=20.0).contains(&regions), "seed {seed} t={}: {regions} regions", t.time);
        }
    }
}

#[test]
fn metrics_recomputed_from_the_persisted_log_match() {
    let sc = small(5, 30);
    let out = run(&sc).unwrap();
    let text = out.log.to_text();
    let parsed = EventLog::parse(&text).unwrap();
    assert_eq!(parsed.to_text(), text);
    let again = MetricLedger::from_log(&parsed, sc.warm_up).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    out.ledger.write_csv(&mut a, "rcms", 5, true).unwrap();
    again.write_csv(&mut b, "rcms", 5, true).unwrap();
    assert_eq!(a, b);
}

#[test]
fn delivered_packets_are_no_faster_than_one_hop() {
    let sc = small(8, 60);
    let out = run(&sc).unwrap();
    if let Some(delay) = out.ledger.interaction_delay() {
        assert!(delay >= sc.radio.base_delay);
    }
    if let Some(dpdr) = out.ledger.dpdr() {
        assert!((0.0..=1.0).contains(&dpdr));
    }
}

#[test]
fn every_scheme_runs_clean() {
    for label in ["rcms", "vmasc_like", "msca_like", "cbdrp_like", "gpsr_like"] {
        let sc = small(2, 30).with_label(label).unwrap();
        let out = run(&sc).unwrap();
        assert!(out.violations.is_empty(), "{label}: {:?}", out.violations.first());
    }
}

#[test]
fn single_point_sweep_matches_the_run() {
    let template = small(0, 25);
    let spec = SweepSpec {
        axis: Axis::MaxSpeed,
        values: vec![22.0],
        seeds: vec![4],
        schemes: vec!["rcms".into()],
    };
    let result = sweep(&template, &spec).unwrap();
    assert_eq!(result.runs.len(), 1);
    let mut sc = template.clone();
    sc.max_speed = 22.0;
    sc.seed = 4;
    let direct = run(&sc).unwrap();
    for row in result.summary(0) {
        let want = direct
            .ledger
            .scalars()
            .into_iter()
            .find(|(k, _)| *k == row.metric)
            .unwrap()
            .1;
        assert_eq!(row.interval.n, 1);
        assert_eq!(row.interval.mean, want, "{}", row.metric);
    }
}

#[test]
fn sweep_cardinality() {
    let template = small(0, 15);
    let spec = SweepSpec {
        axis: Axis::MaxSpeed,
        values: vec![15.0, 20.0, 25.0],
        seeds: (0..5).collect(),
        schemes: vec!["rcms".into(), "msca_like".into()],
    };
    let result = sweep(&template, &spec).unwrap();
    assert_eq!(result.runs.len(), 30);
    let keys: BTreeSet<(u64, u64, &str)> = result
        .runs
        .iter()
        .map(|r| (r.value.to_bits(), r.seed, r.scheme.as_str()))
        .collect();
    assert_eq!(keys.len(), 30);
    assert!(result.runs.iter().all(|r| r.status == RunStatus::Ok));
}
