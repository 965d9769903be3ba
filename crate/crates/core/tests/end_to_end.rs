use restdep_core::fixtures;
use restdep_core::metrics::{format_percent, SuiteReport};
use restdep_core::mock_service::{MockServer, ServiceMode};
use restdep_core::odg::build_odg;
use restdep_core::pipeline::generate;
use restdep_core::plan::CaseKind;
use restdep_core::runner::{execute_suite, RunConfig, Verdict};
use restdep_core::sequence::ElementChoice;
use restdep_core::MockBackend;

#[test]
fn extended_fixture_reaches_full_coverage() {
    let spec = fixtures::flight_booking_extended();
    let backend = MockBackend::new();
    let (g, _, _) = build_odg(&spec, &backend);
    let generated = generate(&spec, &g, &backend, 7, ElementChoice::First).unwrap();
    let plan = &generated.plan;
    let booking_2xx = plan
        .cases
        .iter()
        .filter(|c| c.target_op == "post-/booking" && c.kind == CaseKind::Success2xx)
        .count();
    assert!(booking_2xx >= 10);
    assert!(plan.cases.iter().any(|c| c.expected_status == 404));

    let server = MockServer::start(ServiceMode::Normal, "127.0.0.1:0").unwrap();
    let results = execute_suite(plan, &RunConfig::new(server.base_url()));
    assert_eq!(results.len(), plan.cases.len());
    for (r, c) in results.iter().zip(&plan.cases) {
        assert_eq!(r.case_id, c.id);
        assert_ne!(r.verdict, Verdict::Error, "{}: {:?}", r.case_id, r.failure_reason);
        assert_eq!(r.records.len(), c.steps.len());
    }
    let report = SuiteReport::compute(&spec, plan, &results);
    assert_eq!(format_percent(report.coverage.coverage_2xx), "100", "{report:#?}");
    assert_eq!(format_percent(report.coverage.coverage_4xx), "100", "{report:#?}");
    assert!(report.failures.mismatches.is_empty(), "{:#?}", report.failures);
    assert_eq!(report.failures.server_error_count, 0);
}

#[test]
fn random_element_choice_still_runs_clean() {
    let spec = fixtures::flight_booking();
    let backend = MockBackend::new();
    let (g, _, _) = build_odg(&spec, &backend);
    let generated = generate(&spec, &g, &backend, 3, ElementChoice::Random).unwrap();
    let server = MockServer::start(ServiceMode::Normal, "127.0.0.1:0").unwrap();
    let mut cfg = RunConfig::new(server.base_url());
    cfg.seed = 3;
    let results = execute_suite(&generated.plan, &cfg);
    assert!(results.iter().all(|r| r.verdict != Verdict::Error));
    let booking = results
        .iter()
        .find(|r| r.target_op == "post-/booking" && r.kind == CaseKind::Success2xx)
        .unwrap();
    assert_eq!(booking.final_status, Some(200));
}

#[test]
fn stopped_service_gives_error_verdicts() {
    let spec = fixtures::flight_booking();
    let backend = MockBackend::new();
    let (g, _, _) = build_odg(&spec, &backend);
    let generated = generate(&spec, &g, &backend, 7, ElementChoice::First).unwrap();
    let server = MockServer::start(ServiceMode::Normal, "127.0.0.1:0").unwrap();
    let base = server.base_url();
    server.shutdown();
    let mut cfg = RunConfig::new(base);
    cfg.timeout_ms = 2_000;
    let results = execute_suite(&generated.plan, &cfg);
    assert!(results.iter().all(|r| r.verdict == Verdict::Error));
    let report = SuiteReport::compute(&spec, &generated.plan, &results);
    assert_eq!(format_percent(report.coverage.coverage_overall), "0");
}
