use std::path::PathBuf;

use uavcast::alloc::{benchmark_static, optimize_joint};
use uavcast::evaluate::{evaluate, read_sweep_csv, sweep_t, write_sweep_csv, PlanRef, SWEEP_DT};
use uavcast::flightplan::{build_schedule, position_at, FlightPlan};
use uavcast::pipeline::{run_pipeline, run_with_hover, PipelineConfig};
use uavcast::relaxed::HoverPlan;
use uavcast::scenario::Scenario;
use uavcast::PlanError;

fn golden(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("tests/golden/{name}.toml"));
    Scenario::load(path).unwrap()
}

#[test]
fn mirror_pair_at_200_s_beats_static_hovering() {
    let s = golden("mirror_pair").with_period(200.0);
    let r = run_pipeline(&s, &PipelineConfig::default()).unwrap();
    let m = &r.summary;
    assert!((m.eta_static - 0.4695).abs() < 1e-4);
    assert!(m.eta_joint > m.eta_static);
    assert!(m.eta_star >= 1.7978 - 1e-4);
    assert_eq!(m.gamma, 2);
    assert!(m.relaxed_converged && m.joint_converged);
}

#[test]
fn runs_are_reproducible() {
    let s = golden("triangle");
    let a = run_pipeline(&s, &PipelineConfig::default()).unwrap();
    let b = run_pipeline(&s, &PipelineConfig::default()).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.hover.to_toml().unwrap(), b.hover.to_toml().unwrap());
    assert_eq!(a.joint.to_toml().unwrap(), b.joint.to_toml().unwrap());
}

#[test]
fn short_period_is_reported() {
    let s = golden("five_users");
    let r = run_pipeline(&s, &PipelineConfig::default()).unwrap();
    let short = s.with_period(0.5 * r.flight.fly_time);
    let err = run_with_hover(&short, &r.hover, &r.static_hover, &PipelineConfig::default()).unwrap_err();
    assert!(matches!(err, PlanError::PeriodTooShort { .. }));
}

#[test]
fn artifacts_survive_a_round_trip() {
    let s = golden("triangle");
    let r = run_pipeline(&s, &PipelineConfig::default()).unwrap();
    let hover = HoverPlan::from_toml(&r.hover.to_toml().unwrap()).unwrap();
    assert_eq!(hover, r.hover);
    let flight = FlightPlan::from_toml(&r.flight.to_toml().unwrap()).unwrap();
    assert_eq!(flight, r.flight);
    let again = optimize_joint(&r.discretized, &flight, &s, 1e-6).unwrap();
    assert_eq!(again.eta, r.joint.eta);
}

#[test]
fn schedule_visits_every_stop_and_ends_at_the_last() {
    let s = golden("five_users");
    let r = run_pipeline(&s, &PipelineConfig::default()).unwrap();
    let schedule = build_schedule(&r.flight, &r.joint.tau_hover, s.period).unwrap();
    let end = position_at(&schedule, &r.flight, s.period).unwrap();
    let last = *r.flight.stops().last().unwrap();
    assert!(end.distance(&last) < 1e-9);
    let start = position_at(&schedule, &r.flight, 1e-9).unwrap();
    assert!(position_at(&schedule, &r.flight, 0.0).is_err());
    assert!(start.distance(&r.flight.stops()[0]) < 1e-9);
}

#[test]
fn coarse_evaluation_still_agrees() {
    let s = golden("ten_users_seed21");
    let r = run_pipeline(&s, &PipelineConfig::default()).unwrap();
    let rep = evaluate(
        PlanRef::HoverAndFly { flight: &r.flight, allocation: &r.joint },
        &s,
        SWEEP_DT,
    )
    .unwrap();
    assert!(rep.feasible());
    assert!((rep.min_rate - r.joint.eta).abs() < 1e-3 * r.joint.eta);
}

#[test]
fn sweep_rows_keep_the_ordering_chain() {
    let s = golden("ten_users_seed7");
    let table = sweep_t(&s, &[50.0, 150.0, 300.0], &PipelineConfig::default()).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.skipped.len(), 1);
    let mut csv = Vec::new();
    write_sweep_csv(&table.rows, &mut csv).unwrap();
    for row in read_sweep_csv(csv.as_slice()).unwrap() {
        assert!(row.eta_static <= row.eta_equal + 1e-7);
        assert!(row.eta_equal <= row.eta_joint + 1e-7);
        assert!(row.eta_joint <= row.eta_star + 1e-7);
    }
}

#[test]
fn static_benchmark_is_period_free() {
    let s = golden("triangle");
    let grid = PipelineConfig::default().relaxed.grid;
    let a = benchmark_static(&s, &grid).unwrap();
    let b = benchmark_static(&s.with_period(1000.0), &grid).unwrap();
    assert_eq!(a, b);
}
