//! Executes test plans over HTTP.
//!
//! Cases run in parallel but cases sharing a target operation stay on one
//! worker, in plan order. Results come back in plan order regardless.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::oas::HttpMethod;
use crate::plan::{CaseKind, TestCase, TestPlan, TestStep};

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;
pub const DEFAULT_WORKERS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RunError {
    #[error("request timed out after {0} ms")]
    Timeout(u64),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("extraction path `{path}` not found in response of step {step}")]
    PathNotFound { step: usize, path: String },
    #[error("bad extraction path `{0}`")]
    BadPath(String),
    #[error("results file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    pub workers: usize,
    /// Sent with every request, e.g. authorization.
    pub headers: Vec<(String, String)>,
    /// Seeds the element choice for `[?]` extraction paths.
    pub seed: u64,
}

impl RunConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            workers: DEFAULT_WORKERS,
            headers: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestEcho {
    pub method: HttpMethod,
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpResponseRecord {
    pub step_index: usize,
    pub op_id: String,
    pub status: u16,
    /// Parsed JSON, the raw text when it is not JSON, or null when empty.
    pub body: Value,
    pub latency_ms: u64,
    pub request: RequestEcho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub case_id: String,
    pub target_op: String,
    pub kind: CaseKind,
    pub verdict: Verdict,
    pub final_status: Option<u16>,
    pub expected_status: u16,
    pub records: Vec<HttpResponseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
}

pub fn make_agent(timeout_ms: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(timeout_ms)))
        .http_status_as_error(false)
        .max_redirects(0)
        .build()
        .into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Key(String),
    Index(usize),
    Any,
}

fn parse_path(path: &str) -> Result<Vec<Segment>, RunError> {
    let bad = || RunError::BadPath(path.to_string());
    let mut out = Vec::new();
    let mut rest = path;
    while !rest.is_empty() {
        if let Some(r) = rest.strip_prefix('[') {
            let end = r.find(']').ok_or_else(bad)?;
            let inner = &r[..end];
            out.push(if inner == "?" {
                Segment::Any
            } else {
                Segment::Index(inner.parse().map_err(|_| bad())?)
            });
            rest = &r[end + 1..];
        } else {
            let r = rest.strip_prefix('.').unwrap_or(rest);
            let end = r.find(['.', '[']).unwrap_or(r.len());
            if end == 0 {
                return Err(bad());
            }
            out.push(Segment::Key(r[..end].to_string()));
            rest = &r[end..];
        }
    }
    Ok(out)
}

/// Follow a dotted path with `[k]` indexing, e.g. `[0].id` or `a.b[2].c`.
/// `[?]` takes element 0; use [`extract_value_with`] to randomize it.
pub fn extract_value(body: &Value, path: &str) -> Option<Value> {
    extract_value_with(body, path, &mut |_| 0)
}

/// Like [`extract_value`], with `pick(len)` choosing the element for `[?]`.
pub fn extract_value_with(body: &Value, path: &str, pick: &mut dyn FnMut(usize) -> usize) -> Option<Value> {
    let mut cur = body;
    for seg in parse_path(path).ok()? {
        cur = match seg {
            Segment::Key(k) => cur.as_object()?.get(&k)?,
            Segment::Index(i) => cur.as_array()?.get(i)?,
            Segment::Any => {
                let arr = cur.as_array()?;
                if arr.is_empty() {
                    return None;
                }
                &arr[pick(arr.len()) % arr.len()]
            }
        };
    }
    Some(cur.clone())
}

pub fn render_scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// Substitute path variables. A missing variable renders as an empty
/// segment so the server sees the malformed request.
pub fn render_path(template: &str, vars: &BTreeMap<String, Value>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let Some(len) = rest[start..].find('}') else { break };
        let name = &rest[start + 1..start + len];
        if let Some(v) = vars.get(name) {
            out.extend(utf8_percent_encode(&render_scalar(v), NON_ALPHANUMERIC));
        }
        rest = &rest[start + len + 1..];
    }
    out.push_str(rest);
    out
}

fn parse_body(text: &str) -> Value {
    if text.trim().is_empty() {
        Value::Null
    } else {
        serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
    }
}

/// Send one fully-resolved step.
pub fn make_request(
    agent: &ureq::Agent,
    base_url: &str,
    step: &TestStep,
    extra_headers: &[(String, String)],
) -> Result<(u16, Value, u64, RequestEcho), RunError> {
    let url = format!("{}{}", base_url.trim_end_matches('/'), render_path(&step.path, &step.path_variables));
    let query: Vec<(String, String)> = step
        .query_parameters
        .iter()
        .map(|(k, v)| (k.clone(), render_scalar(v)))
        .collect();
    let headers: Vec<(String, String)> = step
        .headers
        .iter()
        .map(|(k, v)| (k.clone(), render_scalar(v)))
        .chain(extra_headers.iter().cloned())
        .collect();

    macro_rules! prepare {
        ($builder:expr) => {{
            let mut b = $builder.query_pairs(query.iter().map(|(k, v)| (k.as_str(), v.as_str())));
            for (k, v) in &headers {
                b = b.header(k.as_str(), v.as_str());
            }
            b
        }};
    }
    let started = Instant::now();
    let sent = match (step.method, &step.body) {
        (HttpMethod::Post, body) => prepare!(agent.post(&url)).send_json(body.clone().unwrap_or(Value::Null)),
        (HttpMethod::Put, body) => prepare!(agent.put(&url)).send_json(body.clone().unwrap_or(Value::Null)),
        (HttpMethod::Patch, body) => prepare!(agent.patch(&url)).send_json(body.clone().unwrap_or(Value::Null)),
        (HttpMethod::Delete, Some(body)) => prepare!(agent.delete(&url)).force_send_body().send_json(body),
        (HttpMethod::Delete, None) => prepare!(agent.delete(&url)).call(),
        (HttpMethod::Get, _) => prepare!(agent.get(&url)).call(),
        (HttpMethod::Head, _) => prepare!(agent.head(&url)).call(),
        (HttpMethod::Options, _) => prepare!(agent.options(&url)).call(),
        (HttpMethod::Trace, _) => prepare!(agent.trace(&url)).call(),
    };
    let mut resp = sent.map_err(|e| match e {
        ureq::Error::Timeout(_) => RunError::Timeout(started.elapsed().as_millis() as u64),
        other => RunError::Transport(other.to_string()),
    })?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| RunError::Transport(e.to_string()))?;
    let latency = started.elapsed().as_millis() as u64;
    let shown_query: Vec<String> = query.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let echo = RequestEcho {
        method: step.method,
        url: if shown_query.is_empty() {
            url
        } else {
            format!("{url}?{}", shown_query.join("&"))
        },
        body: step.body.clone(),
    };
    Ok((status, parse_body(&text), latency, echo))
}

fn same_json_type(a: &Value, b: &Value) -> bool {
    std::mem::discriminant(a) == std::mem::discriminant(b)
}

/// Run one case's steps in order, resolving bindings from earlier responses.
///
/// At the target step of a failure case a binding only overwrites a slot
/// that already holds a value of the extracted value's JSON type, so the
/// invalid data's omissions and wrong types reach the server intact.
pub fn execute_case(agent: &ureq::Agent, case: &TestCase, cfg: &RunConfig, seed: u64) -> ExecutionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records: Vec<HttpResponseRecord> = Vec::with_capacity(case.steps.len());
    let mut result = ExecutionResult {
        case_id: case.id.clone(),
        target_op: case.target_op.clone(),
        kind: case.kind,
        verdict: Verdict::Error,
        final_status: None,
        expected_status: case.expected_status,
        records: Vec::new(),
        failure_reason: None,
    };
    let last = case.steps.len().saturating_sub(1);
    for (i, template) in case.steps.iter().enumerate() {
        let mut step = template.clone();
        for b in &template.bindings_in {
            let source = records.get(b.from_step).map(|r| &r.body).unwrap_or(&Value::Null);
            let Some(value) = extract_value_with(source, &b.extraction_path, &mut |n| rng.random_range(0..n)) else {
                result.failure_reason = Some(
                    RunError::PathNotFound {
                        step: b.from_step,
                        path: b.extraction_path.clone(),
                    }
                    .to_string(),
                );
                result.records = records;
                return result;
            };
            let guarded = case.kind == CaseKind::Failure4xx && i == last;
            if !guarded || step.slot(b).is_some_and(|cur| same_json_type(cur, &value)) {
                step.set_slot(b, value);
            }
        }
        match make_request(agent, &cfg.base_url, &step, &cfg.headers) {
            Ok((status, body, latency_ms, request)) => records.push(HttpResponseRecord {
                step_index: i,
                op_id: step.op_id.clone(),
                status,
                body,
                latency_ms,
                request,
            }),
            Err(e) => {
                result.failure_reason = Some(format!("step {i} ({}): {e}", step.op_id));
                result.records = records;
                return result;
            }
        }
    }
    let final_status = records.last().map(|r| r.status);
    result.final_status = final_status;
    result.records = records;
    if final_status == Some(case.expected_status) {
        result.verdict = Verdict::Pass;
    } else {
        result.verdict = Verdict::Fail;
        result.failure_reason = final_status.map(|s| format!("expected {} but got {s}", case.expected_status));
    }
    result
}

/// Run every case with `cfg.workers` threads, each with its own agent.
pub fn execute_suite(plan: &TestPlan, cfg: &RunConfig) -> Vec<ExecutionResult> {
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, c) in plan.cases.iter().enumerate() {
        match groups.iter_mut().find(|(t, _)| t == &c.target_op) {
            Some((_, v)) => v.push(i),
            None => groups.push((c.target_op.clone(), vec![i])),
        }
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|s| {
        for _ in 0..cfg.workers.max(1).min(groups.len().max(1)) {
            let tx = tx.clone();
            let (next, groups) = (&next, &groups);
            s.spawn(move || {
                let agent = make_agent(cfg.timeout_ms);
                loop {
                    let g = next.fetch_add(1, Ordering::SeqCst);
                    let Some((_, idx)) = groups.get(g) else { break };
                    for &i in idx {
                        let case = &plan.cases[i];
                        log::debug!("running {}", case.id);
                        let r = execute_case(&agent, case, cfg, cfg.seed.wrapping_add(i as u64));
                        if tx.send((i, r)).is_err() {
                            return;
                        }
                    }
                }
            });
        }
    });
    drop(tx);
    let mut slots: Vec<Option<ExecutionResult>> = vec![None; plan.cases.len()];
    for (i, r) in rx {
        slots[i] = Some(r);
    }
    slots.into_iter().map(|r| r.expect("every case produces a result")).collect()
}

pub fn write_results_jsonl(results: &[ExecutionResult], path: &Path) -> Result<(), RunError> {
    let io = |e: std::io::Error| RunError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for r in results {
        serde_json::to_writer(&mut f, r).map_err(|e| RunError::Io(e.to_string()))?;
        f.write_all(b"\n").map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn read_results_jsonl(path: &Path) -> Result<Vec<ExecutionResult>, RunError> {
    let io = |e: std::io::Error| RunError::Io(format!("{}: {e}", path.display()));
    let f = fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| RunError::Io(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn extraction_paths() {
        let body = json!([{"id": 7, "tags": ["a", "b"]}, {"id": 9}]);
        assert_eq!(extract_value(&body, "[0].id"), Some(json!(7)));
        assert_eq!(extract_value(&body, "[1].id"), Some(json!(9)));
        assert_eq!(extract_value(&body, "[0].tags[1]"), Some(json!("b")));
        assert_eq!(extract_value(&body, "[2].id"), None);
        assert_eq!(extract_value(&body, "[0].missing"), None);
        assert_eq!(extract_value(&json!({"a": {"b": [1, 2]}}), "a.b[1]"), Some(json!(2)));
        assert_eq!(extract_value(&json!({"id": 3}), "id"), Some(json!(3)));
        assert_eq!(extract_value_with(&body, "[?].id", &mut |_| 1), Some(json!(9)));
        assert_eq!(extract_value(&json!([]), "[?].id"), None);
        assert!(parse_path("[x]").is_err());
        assert!(parse_path("a..b").is_err());
    }

    #[test]
    fn path_rendering() {
        let mut vars = BTreeMap::new();
        vars.insert("id".to_string(), json!(42));
        assert_eq!(render_path("/flights/{id}", &vars), "/flights/42");
        vars.insert("id".to_string(), json!("a b"));
        assert_eq!(render_path("/flights/{id}", &vars), "/flights/a%20b");
        assert_eq!(render_path("/flights/{id}", &BTreeMap::new()), "/flights/");
    }

    #[test]
    fn bodies_are_parsed_when_possible() {
        assert_eq!(parse_body(""), Value::Null);
        assert_eq!(parse_body("{\"a\":1}"), json!({"a": 1}));
        assert_eq!(parse_body("oops"), json!("oops"));
    }

    #[test]
    fn unreachable_server_is_an_error_verdict() {
        let spec = crate::fixtures::flight_booking();
        let op = spec.operation("get-/flights").unwrap();
        let case = TestCase {
            id: "c".into(),
            target_op: op.id.clone(),
            steps: vec![TestStep::from_item(op, &serde_json::Map::new())],
            data_item_ref: crate::plan::DataRef {
                file: "x".into(),
                index: 0,
            },
            expected_status: 200,
            kind: CaseKind::Success2xx,
            undocumented_expectation: false,
        };
        let cfg = RunConfig::new("http://127.0.0.1:9");
        let r = execute_case(&make_agent(500), &case, &cfg, 0);
        assert_eq!(r.verdict, Verdict::Error);
        assert!(r.final_status.is_none());
        assert!(r.failure_reason.unwrap().contains("get-/flights"));
    }

    #[test]
    fn results_jsonl_round_trip() {
        let r = ExecutionResult {
            case_id: "a#2xx-0".into(),
            target_op: "a".into(),
            kind: CaseKind::Success2xx,
            verdict: Verdict::Pass,
            final_status: Some(200),
            expected_status: 200,
            records: vec![],
            failure_reason: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.jsonl");
        write_results_jsonl(&[r.clone(), r.clone()], &path).unwrap();
        assert_eq!(read_results_jsonl(&path).unwrap(), vec![r.clone(), r]);
    }
}
