//! Coverage, efficiency and failure scoring over execution results.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::oas::{is_5xx, ApiSpec, StatusRange};
use crate::plan::TestPlan;
use crate::runner::{ExecutionResult, Verdict};

/// `num / den` as a percentage, undefined when `den` is zero.
pub fn percent(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 * 100.0 / den as f64)
}

/// One decimal, trailing `.0` dropped, `-` when undefined.
pub fn format_percent(p: Option<f64>) -> String {
    match p {
        None => "-".to_string(),
        Some(v) => {
            let s = format!("{v:.1}");
            s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub service: String,
    pub documented_2xx: usize,
    pub documented_4xx: usize,
    pub covered_2xx: usize,
    pub covered_4xx: usize,
    pub coverage_2xx: Option<f64>,
    pub coverage_4xx: Option<f64>,
    pub coverage_overall: Option<f64>,
    /// Documented (operation, code) pairs some case triggered.
    pub covered: Vec<(String, u16)>,
}

/// A documented code counts once some case targeting its operation
/// finished with it.
pub fn compute_coverage(spec: &ApiSpec, results: &[ExecutionResult]) -> CoverageReport {
    let triggered: BTreeSet<(&str, u16)> = results
        .iter()
        .filter(|r| r.verdict != Verdict::Error)
        .filter_map(|r| r.final_status.map(|s| (r.target_op.as_str(), s)))
        .collect();
    let mut documented = [0usize; 2];
    let mut covered_n = [0usize; 2];
    let mut covered = Vec::new();
    for op in &spec.operations {
        for &code in op.documented_responses.keys() {
            let slot = match StatusRange::of(code) {
                Some(StatusRange::Success) => 0,
                Some(StatusRange::ClientError) => 1,
                None => continue,
            };
            documented[slot] += 1;
            if triggered.contains(&(op.id.as_str(), code)) {
                covered_n[slot] += 1;
                covered.push((op.id.clone(), code));
            }
        }
    }
    CoverageReport {
        service: spec.title.clone(),
        documented_2xx: documented[0],
        documented_4xx: documented[1],
        covered_2xx: covered_n[0],
        covered_4xx: covered_n[1],
        coverage_2xx: percent(covered_n[0], documented[0]),
        coverage_4xx: percent(covered_n[1], documented[1]),
        coverage_overall: percent(covered_n[0] + covered_n[1], documented[0] + documented[1]),
        covered,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeEfficiency {
    pub range: StatusRange,
    pub generated: usize,
    pub actually_covering: usize,
    pub score: Option<f64>,
}

impl RangeEfficiency {
    pub fn from_counts(range: StatusRange, generated: usize, actually_covering: usize) -> Self {
        Self {
            range,
            generated,
            actually_covering,
            score: percent(actually_covering, generated),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub success: RangeEfficiency,
    pub client_error: RangeEfficiency,
}

/// Every case expecting a code in R counts as generated for R. Covering
/// cases are deduplicated to distinct (operation, final code in R) pairs.
pub fn compute_efficiency(results: &[ExecutionResult], plan: &TestPlan) -> EfficiencyReport {
    let one = |range: StatusRange| {
        let generated = plan.cases.iter().filter(|c| range.contains(c.expected_status)).count();
        let pairs: BTreeSet<(&str, u16)> = results
            .iter()
            .filter(|r| r.verdict != Verdict::Error && range.contains(r.expected_status))
            .filter_map(|r| r.final_status.filter(|&s| range.contains(s)).map(|s| (r.target_op.as_str(), s)))
            .collect();
        RangeEfficiency::from_counts(range, generated, pairs.len())
    };
    EfficiencyReport {
        success: one(StatusRange::Success),
        client_error: one(StatusRange::ClientError),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Witnessed {
    pub op_id: String,
    pub status: u16,
    pub case_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mismatch {
    pub op_id: String,
    pub documented: u16,
    /// Final status the witness case got instead.
    pub observed: u16,
    pub case_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FailureReport {
    /// Number of requests, in any step, answered with a 5xx.
    pub server_error_count: usize,
    pub server_errors: Vec<Witnessed>,
    pub undocumented_codes: Vec<Witnessed>,
    pub mismatches: Vec<Mismatch>,
}

type Tally<'a> = (bool, Option<(&'a str, u16)>);

/// Each result lands in at most one class: any 5xx makes it a server
/// error; otherwise any undocumented (operation, status) makes it an
/// undocumented witness; otherwise it takes part in mismatch detection,
/// where a documented expected code counts as a mismatch when no case
/// expecting it got it.
pub fn detect_failures(spec: &ApiSpec, results: &[ExecutionResult]) -> FailureReport {
    let documented = |op: &str, code: u16| spec.operation(op).is_ok_and(|o| o.documents(code));
    let mut report = FailureReport::default();
    let mut server = BTreeMap::new();
    let mut undocumented = BTreeMap::new();
    // (operation, expected) -> (some case got it, first case that did not)
    let mut expectations: BTreeMap<(&str, u16), Tally> = BTreeMap::new();

    for r in results {
        let fives: Vec<_> = r.records.iter().filter(|x| is_5xx(x.status)).collect();
        if !fives.is_empty() {
            report.server_error_count += fives.len();
            for x in fives {
                server.entry((x.op_id.clone(), x.status)).or_insert_with(|| r.case_id.clone());
            }
            continue;
        }
        let strays: Vec<_> = r.records.iter().filter(|x| !documented(&x.op_id, x.status)).collect();
        if !strays.is_empty() {
            for x in strays {
                undocumented.entry((x.op_id.clone(), x.status)).or_insert_with(|| r.case_id.clone());
            }
            continue;
        }
        if r.verdict == Verdict::Error || !documented(&r.target_op, r.expected_status) {
            continue;
        }
        let Some(final_status) = r.final_status else { continue };
        let e = expectations
            .entry((r.target_op.as_str(), r.expected_status))
            .or_insert((false, None));
        if final_status == r.expected_status {
            e.0 = true;
        } else if e.1.is_none() {
            e.1 = Some((r.case_id.as_str(), final_status));
        }
    }

    let witnessed = |m: BTreeMap<(String, u16), String>| {
        m.into_iter()
            .map(|((op_id, status), case_id)| Witnessed { op_id, status, case_id })
            .collect()
    };
    report.server_errors = witnessed(server);
    report.undocumented_codes = witnessed(undocumented);
    report.mismatches = expectations
        .into_iter()
        .filter_map(|((op, code), (hit, miss))| match (hit, miss) {
            (false, Some((case_id, observed))) => Some(Mismatch {
                op_id: op.to_string(),
                documented: code,
                observed,
                case_id: case_id.to_string(),
            }),
            _ => None,
        })
        .collect();
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub cases: usize,
    pub pass: usize,
    pub fail: usize,
    pub error: usize,
}

impl Totals {
    pub fn of(results: &[ExecutionResult]) -> Self {
        let count = |v| results.iter().filter(|r| r.verdict == v).count();
        Self {
            cases: results.len(),
            pass: count(Verdict::Pass),
            fail: count(Verdict::Fail),
            error: count(Verdict::Error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub totals: Totals,
    pub coverage: CoverageReport,
    pub efficiency: EfficiencyReport,
    pub failures: FailureReport,
}

impl SuiteReport {
    pub fn compute(spec: &ApiSpec, plan: &TestPlan, results: &[ExecutionResult]) -> Self {
        Self {
            totals: Totals::of(results),
            coverage: compute_coverage(spec, results),
            efficiency: compute_efficiency(results, plan),
            failures: detect_failures(spec, results),
        }
    }

    /// Mismatches and server errors fail CI; undocumented codes do not.
    pub fn has_blocking_failures(&self) -> bool {
        self.failures.server_error_count > 0 || !self.failures.mismatches.is_empty()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Fixed-width text tables: coverage, efficiency, failures.
pub fn render_report(report: &SuiteReport) -> String {
    let c = &report.coverage;
    let mut out = String::new();
    let _ = writeln!(out, "Coverage of documented status codes (%)");
    let _ = writeln!(out, "{:<32} {:>8} {:>8} {:>8}", "Service", "Overall", "2xx", "4xx");
    let _ = writeln!(
        out,
        "{:<32} {:>8} {:>8} {:>8}",
        truncate(&c.service, 32),
        format_percent(c.coverage_overall),
        format_percent(c.coverage_2xx),
        format_percent(c.coverage_4xx)
    );
    let _ = writeln!(
        out,
        "  2xx covered {}/{}, 4xx covered {}/{}\n",
        c.covered_2xx, c.documented_2xx, c.covered_4xx, c.documented_4xx
    );

    let _ = writeln!(out, "Efficiency");
    let _ = writeln!(out, "{:<6} {:>10} {:>10} {:>8}", "Range", "Generated", "Covering", "Score");
    for e in [&report.efficiency.success, &report.efficiency.client_error] {
        let _ = writeln!(
            out,
            "{:<6} {:>10} {:>10} {:>8}",
            e.range.label(),
            e.generated,
            e.actually_covering,
            format_percent(e.score)
        );
    }

    let f = &report.failures;
    let _ = writeln!(out, "\nFailures");
    let _ = writeln!(out, "{:<24} {:>6}", "5xx responses", f.server_error_count);
    let _ = writeln!(out, "{:<24} {:>6}", "Undocumented codes", f.undocumented_codes.len());
    let _ = writeln!(out, "{:<24} {:>6}", "Mismatches", f.mismatches.len());
    for w in &f.server_errors {
        let _ = writeln!(out, "  5xx          {} {} ({})", w.op_id, w.status, w.case_id);
    }
    for w in &f.undocumented_codes {
        let _ = writeln!(out, "  undocumented {} {} ({})", w.op_id, w.status, w.case_id);
    }
    for m in &f.mismatches {
        let _ = writeln!(
            out,
            "  mismatch     {} expected {} got {} ({})",
            m.op_id, m.documented, m.observed, m.case_id
        );
    }
    let t = &report.totals;
    let _ = writeln!(
        out,
        "\nCases: {} total, {} pass, {} fail, {} error",
        t.cases, t.pass, t.fail, t.error
    );
    out
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::plan::{CaseKind, DataRef, TestCase};
    use crate::runner::HttpResponseRecord;
    use proptest::prelude::*;
    use serde_json::Value;

    fn record(op: &str, status: u16) -> HttpResponseRecord {
        HttpResponseRecord {
            step_index: 0,
            op_id: op.into(),
            status,
            body: Value::Null,
            latency_ms: 1,
            request: crate::runner::RequestEcho {
                method: crate::oas::HttpMethod::Get,
                url: String::new(),
                body: None,
            },
        }
    }

    fn result(id: &str, op: &str, expected: u16, statuses: &[(&str, u16)]) -> ExecutionResult {
        let final_status = statuses.last().map(|s| s.1);
        ExecutionResult {
            case_id: id.into(),
            target_op: op.into(),
            kind: if expected < 300 { CaseKind::Success2xx } else { CaseKind::Failure4xx },
            verdict: if final_status == Some(expected) { Verdict::Pass } else { Verdict::Fail },
            final_status,
            expected_status: expected,
            records: statuses.iter().map(|(o, s)| record(o, *s)).collect(),
            failure_reason: None,
        }
    }

    fn case(id: &str, op: &str, expected: u16) -> TestCase {
        TestCase {
            id: id.into(),
            target_op: op.into(),
            steps: vec![],
            data_item_ref: DataRef {
                file: String::new(),
                index: 0,
            },
            expected_status: expected,
            kind: CaseKind::Success2xx,
            undocumented_expectation: false,
        }
    }

    fn plan(cases: Vec<TestCase>) -> TestPlan {
        TestPlan {
            suite_id: "s".into(),
            spec_fingerprint: String::new(),
            cases,
            skipped: vec![],
        }
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(format_percent(percent(16, 19)), "84.2");
        assert_eq!(format_percent(percent(6, 6)), "100");
        assert_eq!(format_percent(percent(0, 0)), "-");
        assert_eq!(format_percent(percent(0, 3)), "0");
        assert_eq!(format_percent(percent(1, 3)), "33.3");
    }

    #[test]
    fn extended_fixture_coverage() {
        let spec = fixtures::flight_booking_extended();
        let b = "post-/booking";
        let results = vec![
            result("f", "get-/flights", 200, &[("get-/flights", 200)]),
            result("d", "delete-/flights/{id}", 204, &[("get-/flights", 200), ("delete-/flights/{id}", 204)]),
            result("b0", b, 200, &[("get-/flights", 200), (b, 200)]),
            result("b1", b, 200, &[("get-/flights", 200), (b, 200)]),
            result("b2", b, 400, &[("get-/flights", 200), (b, 400)]),
        ];
        let c = compute_coverage(&spec, &results);
        assert_eq!((c.documented_2xx, c.covered_2xx), (3, 3));
        assert_eq!((c.documented_4xx, c.covered_4xx), (2, 1));
        assert_eq!(format_percent(c.coverage_4xx), "50");
        assert_eq!(format_percent(c.coverage_overall), "80");
    }

    #[test]
    fn error_results_cover_nothing() {
        let spec = fixtures::flight_booking();
        let mut r = result("f", "get-/flights", 200, &[]);
        r.verdict = Verdict::Error;
        let c = compute_coverage(&spec, &[r]);
        assert_eq!(c.covered_2xx, 0);
        assert_eq!(format_percent(c.coverage_overall), "0");
    }

    #[test]
    fn efficiency_deduplicates_pairs() {
        let cases = vec![case("a", "x", 200), case("b", "x", 200), case("c", "y", 200)];
        let results = vec![
            result("a", "x", 200, &[("x", 200)]),
            result("b", "x", 200, &[("x", 200)]),
            result("c", "y", 200, &[("y", 404)]),
        ];
        let e = compute_efficiency(&results, &plan(cases));
        assert_eq!((e.success.generated, e.success.actually_covering), (3, 1));
        assert_eq!(format_percent(e.success.score), "33.3");
        assert_eq!(format_percent(e.client_error.score), "-");
    }

    #[test]
    fn failure_classes_are_exclusive() {
        let spec = fixtures::flight_booking_faults();
        let b = "post-/booking";
        let results = vec![
            result("h", "get-/health", 200, &[("get-/health", 500)]),
            result("s", "get-/status", 200, &[("get-/status", 304)]),
            result("b0", b, 200, &[("get-/flights", 200), (b, 200)]),
            result("b1", b, 404, &[("get-/flights", 200), ("delete-/flights/{id}", 204), (b, 200)]),
        ];
        let f = detect_failures(&spec, &results);
        assert_eq!(f.server_error_count, 1);
        assert_eq!(f.server_errors[0].case_id, "h");
        assert_eq!(f.undocumented_codes.len(), 1);
        assert_eq!(f.undocumented_codes[0].status, 304);
        assert_eq!(
            f.mismatches,
            vec![Mismatch {
                op_id: b.into(),
                documented: 404,
                observed: 200,
                case_id: "b1".into()
            }]
        );
    }

    #[test]
    fn report_round_trips_and_renders_dashes() {
        let spec = fixtures::flight_booking();
        let report = SuiteReport::compute(&spec, &plan(vec![]), &[]);
        assert_eq!(SuiteReport::from_json(&report.to_json()).unwrap(), report);
        let text = render_report(&report);
        assert!(text.contains("Overall"));
        assert!(text.lines().any(|l| l.starts_with("4xx") && l.trim_end().ends_with('-')));
        assert!(!report.has_blocking_failures());
    }

    proptest! {
        #[test]
        fn coverage_is_monotone(base in prop::collection::vec((0usize..3, 0usize..4), 0..12), extra in (0usize..3, 0usize..4)) {
            let spec = fixtures::flight_booking_extended();
            let ops = ["get-/flights", "delete-/flights/{id}", "post-/booking"];
            let codes = [200u16, 204, 400, 404];
            let mk = |(o, c): (usize, usize)| result("x", ops[o], codes[c], &[(ops[o], codes[c])]);
            let mut results: Vec<_> = base.into_iter().map(mk).collect();
            let before = compute_coverage(&spec, &results);
            results.push(mk(extra));
            let after = compute_coverage(&spec, &results);
            prop_assert!(after.covered_2xx >= before.covered_2xx);
            prop_assert!(after.covered_4xx >= before.covered_4xx);
            prop_assert!(after.coverage_overall >= before.coverage_overall);
        }

        #[test]
        fn efficiency_is_bounded(outcomes in prop::collection::vec((0usize..4, 0usize..4, 200u16..202), 0..20)) {
            let ops = ["a", "b", "c", "d"];
            let mut cases = Vec::new();
            let mut results = Vec::new();
            for (i, (o, s, expected)) in outcomes.iter().enumerate() {
                let id = format!("c{i}");
                cases.push(case(&id, ops[*o], *expected));
                results.push(result(&id, ops[*o], *expected, &[(ops[*o], 200 + *s as u16)]));
            }
            let e = compute_efficiency(&results, &plan(cases));
            if let Some(score) = e.success.score {
                prop_assert!((0.0..=100.0).contains(&score));
            }
            prop_assert!(e.success.actually_covering <= e.success.generated);
        }
    }
}
