//! Executable test plans.
//!
//! Success cases pair each operation's sequence with each of its valid data
//! items. Failure cases reuse success cases as templates, either swapping
//! the target's data for an invalid item or inserting a DELETE that
//! invalidates the identifier the target is about to use.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::datagen::{DataItem, Dataset, DatasetMode};
use crate::oas::{ApiSpec, HttpMethod, OperationDef, ParamLocation, StatusRange};
use crate::odg::OperationDependencyGraph;
use crate::sequence::OperationSequence;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("no valid dataset for `{0}`")]
    MissingDataset(String),
    #[error("no sequence for `{0}`")]
    MissingSequence(String),
    #[error("unknown operation `{0}`")]
    UnknownOperation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseKind {
    #[serde(rename = "success_2xx")]
    Success2xx,
    #[serde(rename = "failure_4xx")]
    Failure4xx,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepBinding {
    pub from_step: usize,
    pub extraction_path: String,
    pub into_param: String,
    pub location: ParamLocation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestStep {
    pub op_id: String,
    pub method: HttpMethod,
    pub path: String,
    pub path_variables: BTreeMap<String, Value>,
    pub query_parameters: BTreeMap<String, Value>,
    pub headers: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
    pub bindings_in: Vec<StepBinding>,
}

impl TestStep {
    /// Lay out a flat data item by parameter location. Null query and
    /// header values are left out; null body fields are sent as null.
    pub fn from_item(op: &OperationDef, data: &Map<String, Value>) -> Self {
        let mut step = TestStep {
            op_id: op.id.clone(),
            method: op.method,
            path: op.path.clone(),
            path_variables: BTreeMap::new(),
            query_parameters: BTreeMap::new(),
            headers: BTreeMap::new(),
            body: None,
            bindings_in: Vec::new(),
        };
        for p in op.all_parameters() {
            let Some(v) = data.get(&p.name) else { continue };
            match p.location {
                ParamLocation::Path => {
                    step.path_variables.insert(p.name.clone(), v.clone());
                }
                ParamLocation::Query if !v.is_null() => {
                    step.query_parameters.insert(p.name.clone(), v.clone());
                }
                ParamLocation::Header if !v.is_null() => {
                    step.headers.insert(p.name.clone(), v.clone());
                }
                ParamLocation::Query | ParamLocation::Header => {}
                ParamLocation::BodyField => {
                    set_body_field(&mut step.body, p.pointer.as_deref().unwrap_or_default(), v.clone());
                }
            }
        }
        if step.body.is_none() && op.request_body_schema.as_ref().is_some_and(|b| !b.is_array) {
            step.body = Some(Value::Object(Map::new()));
        }
        step
    }

    /// Current value in the slot a binding writes to.
    pub fn slot(&self, b: &StepBinding) -> Option<&Value> {
        match b.location {
            ParamLocation::Path => self.path_variables.get(&b.into_param),
            ParamLocation::Query => self.query_parameters.get(&b.into_param),
            ParamLocation::Header => self.headers.get(&b.into_param),
            ParamLocation::BodyField => {
                let ptr = b.pointer.as_deref().unwrap_or_default();
                self.body.as_ref().and_then(|body| body.pointer(ptr))
            }
        }
    }

    pub fn set_slot(&mut self, b: &StepBinding, value: Value) {
        match b.location {
            ParamLocation::Path => {
                self.path_variables.insert(b.into_param.clone(), value);
            }
            ParamLocation::Query => {
                self.query_parameters.insert(b.into_param.clone(), value);
            }
            ParamLocation::Header => {
                self.headers.insert(b.into_param.clone(), value);
            }
            ParamLocation::BodyField => {
                set_body_field(&mut self.body, b.pointer.as_deref().unwrap_or_default(), value);
            }
        }
    }
}

/// `pointer` is `/name` for a flattened field or empty for the whole body.
fn set_body_field(body: &mut Option<Value>, pointer: &str, value: Value) {
    let Some(key) = pointer.strip_prefix('/') else {
        *body = Some(value);
        return;
    };
    let key = key.replace("~1", "/").replace("~0", "~");
    match body {
        Some(Value::Object(map)) => {
            map.insert(key, value);
        }
        _ => {
            let mut map = Map::new();
            map.insert(key, value);
            *body = Some(Value::Object(map));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRef {
    pub file: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub target_op: String,
    pub steps: Vec<TestStep>,
    pub data_item_ref: DataRef,
    pub expected_status: u16,
    pub kind: CaseKind,
    /// The expected status is not documented for the target, and no code
    /// in its range is either.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub undocumented_expectation: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub target_op: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPlan {
    pub suite_id: String,
    pub spec_fingerprint: String,
    pub cases: Vec<TestCase>,
    #[serde(default)]
    pub skipped: Vec<SkipReport>,
}

impl TestPlan {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Valid and invalid datasets keyed by operation id.
#[derive(Debug, Clone, Default)]
pub struct Datasets {
    pub valid: BTreeMap<String, Dataset>,
    pub invalid: BTreeMap<String, Dataset>,
}

pub fn data_file(op_id: &str, mode: DatasetMode) -> String {
    format!("data/{}", Dataset::file_name(op_id, mode))
}

/// The item's code when documented, else the lowest documented code in the
/// same range, else the item's code flagged as undocumented.
pub fn clip_expected(op: &OperationDef, code: u16) -> (u16, bool) {
    if op.documents(code) {
        return (code, false);
    }
    match StatusRange::of(code).and_then(|r| op.documented_in_range(r).first().copied()) {
        Some(c) => (c, false),
        None => (code, true),
    }
}

fn item_for<'a>(datasets: &'a Datasets, op_id: &str, index: usize) -> Option<&'a DataItem> {
    let items = &datasets.valid.get(op_id)?.items;
    (!items.is_empty()).then(|| &items[index % items.len()])
}

fn wire_bindings(steps: &mut [TestStep], seq: &OperationSequence, spec: &ApiSpec) {
    for b in &seq.bindings {
        let Ok(consumer) = spec.operation(&seq.steps[b.to_step]) else { continue };
        let Some(param) = consumer.all_parameters().into_iter().find(|p| p.name == b.param) else {
            continue;
        };
        steps[b.to_step].bindings_in.push(StepBinding {
            from_step: b.from_step,
            extraction_path: b.path.clone(),
            into_param: b.param.clone(),
            location: param.location,
            pointer: param.pointer,
        });
    }
}

/// One case per (operation, valid item). Prerequisite steps use item
/// `i mod n` of their own valid dataset.
pub fn assemble_2xx_cases(
    seqs: &BTreeMap<String, OperationSequence>,
    datasets: &Datasets,
    spec: &ApiSpec,
) -> Result<Vec<TestCase>, PlanError> {
    let mut cases = Vec::new();
    for op in &spec.operations {
        let seq = seqs.get(&op.id).ok_or_else(|| PlanError::MissingSequence(op.id.clone()))?;
        let valid = datasets
            .valid
            .get(&op.id)
            .filter(|d| !d.items.is_empty())
            .ok_or_else(|| PlanError::MissingDataset(op.id.clone()))?;
        for (i, item) in valid.items.iter().enumerate() {
            let mut steps = Vec::with_capacity(seq.steps.len());
            for step_op in &seq.steps {
                let def = spec
                    .operation(step_op)
                    .map_err(|_| PlanError::UnknownOperation(step_op.clone()))?;
                let data = if step_op == &op.id {
                    &item.data
                } else {
                    &item_for(datasets, step_op, i)
                        .ok_or_else(|| PlanError::MissingDataset(step_op.clone()))?
                        .data
                };
                steps.push(TestStep::from_item(def, data));
            }
            wire_bindings(&mut steps, seq, spec);
            let (expected_status, undocumented_expectation) = clip_expected(op, item.expected_code);
            cases.push(TestCase {
                id: format!("{}#2xx-{i}", op.id),
                target_op: op.id.clone(),
                steps,
                data_item_ref: DataRef {
                    file: data_file(&op.id, DatasetMode::Valid),
                    index: i,
                },
                expected_status,
                kind: CaseKind::Success2xx,
                undocumented_expectation,
            });
        }
    }
    Ok(cases)
}

/// Failure cases from success templates: (a) invalid data substituted into
/// the target step; (b) a DELETE inserted right after the producer of an
/// identifier the target consumes, expecting 404.
pub fn derive_4xx_cases(
    cases_2xx: &[TestCase],
    datasets: &Datasets,
    spec: &ApiSpec,
    g: &OperationDependencyGraph,
) -> (Vec<TestCase>, Vec<SkipReport>) {
    let mut cases = Vec::new();
    let mut skipped = Vec::new();
    for op in &spec.operations {
        let templates: Vec<&TestCase> = cases_2xx
            .iter()
            .filter(|c| c.target_op == op.id && c.kind == CaseKind::Success2xx)
            .collect();
        let mut reasons = Vec::new();
        let before = cases.len();

        match datasets.invalid.get(&op.id).filter(|d| !d.items.is_empty()) {
            _ if templates.is_empty() => reasons.push("no success case to use as a template".to_string()),
            None => reasons.push("no invalid data".to_string()),
            Some(invalid) => {
                for (j, item) in invalid.items.iter().enumerate() {
                    let mut case = templates[j % templates.len()].clone();
                    let last = case.steps.len() - 1;
                    let bindings = std::mem::take(&mut case.steps[last].bindings_in);
                    case.steps[last] = TestStep::from_item(op, &item.data);
                    case.steps[last].bindings_in = bindings;
                    let (expected, flagged) = clip_expected(op, item.expected_code);
                    case.id = format!("{}#4xx-{j}", op.id);
                    case.data_item_ref = DataRef {
                        file: data_file(&op.id, DatasetMode::Invalid),
                        index: j,
                    };
                    case.expected_status = expected;
                    case.undocumented_expectation = flagged;
                    case.kind = CaseKind::Failure4xx;
                    cases.push(case);
                }
            }
        }

        match templates.first().map(|t| delete_insertion(t, op, spec, g, datasets)) {
            Some(Ok(case)) => cases.push(case),
            Some(Err(reason)) => reasons.push(reason),
            None => {}
        }
        if cases.len() == before {
            skipped.push(SkipReport {
                target_op: op.id.clone(),
                reason: reasons.join("; "),
            });
        }
    }
    (cases, skipped)
}

fn delete_insertion(
    template: &TestCase,
    op: &OperationDef,
    spec: &ApiSpec,
    g: &OperationDependencyGraph,
    datasets: &Datasets,
) -> Result<TestCase, String> {
    if !op.documents(404) {
        return Err("404 is not documented".into());
    }
    let last = template.steps.len() - 1;
    for b in &template.steps[last].bindings_in {
        let producer = &template.steps[b.from_step].op_id;
        let (prefix, field) = match b.extraction_path.rsplit_once('.') {
            Some((p, f)) => (format!("{p}."), f),
            None => (String::new(), b.extraction_path.as_str()),
        };
        for d in spec.operations.iter().filter(|d| d.method == HttpMethod::Delete && d.id != op.id) {
            let Some(edge) = g.edges.iter().find(|e| {
                &e.source == producer
                    && e.target == d.id
                    && e.field_pairs.iter().any(|p| p.producer_field == field)
            }) else {
                continue;
            };
            let params = d.all_parameters();
            let bound = |name: &str| edge.field_pairs.iter().any(|p| p.consumer_param == name);
            if !params.iter().filter(|p| p.required).all(|p| bound(&p.name)) {
                continue;
            }
            let empty = Map::new();
            let data = item_for(datasets, &d.id, 0).map_or(&empty, |i| &i.data);
            let mut del = TestStep::from_item(d, data);
            for pair in &edge.field_pairs {
                let Some(p) = params.iter().find(|p| p.name == pair.consumer_param) else { continue };
                del.bindings_in.push(StepBinding {
                    from_step: b.from_step,
                    extraction_path: format!("{prefix}{}", pair.producer_field),
                    into_param: p.name.clone(),
                    location: p.location,
                    pointer: p.pointer.clone(),
                });
            }
            let at = b.from_step + 1;
            let mut case = template.clone();
            for step in &mut case.steps[at..] {
                for sb in &mut step.bindings_in {
                    if sb.from_step >= at {
                        sb.from_step += 1;
                    }
                }
            }
            case.steps.insert(at, del);
            case.id = format!("{}#404-{}", op.id, d.id);
            case.expected_status = 404;
            case.undocumented_expectation = false;
            case.kind = CaseKind::Failure4xx;
            return Ok(case);
        }
    }
    Err("no DELETE shares a producer field with this operation".into())
}

/// Success cases, then failure cases, under one fingerprinted plan.
pub fn build_plan(
    spec: &ApiSpec,
    seqs: &BTreeMap<String, OperationSequence>,
    datasets: &Datasets,
    g: &OperationDependencyGraph,
    seed: u64,
) -> Result<TestPlan, PlanError> {
    let mut cases = assemble_2xx_cases(seqs, datasets, spec)?;
    let (derived, skipped) = derive_4xx_cases(&cases, datasets, spec, g);
    cases.extend(derived);
    let spec_fingerprint = spec.fingerprint();
    Ok(TestPlan {
        suite_id: format!("{}-{seed}", &spec_fingerprint[..12]),
        spec_fingerprint,
        cases,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{
        detect_inter_param_constraints, generate_dataset, mutate_for_failure, DataProvenance,
    };
    use crate::fixtures;
    use crate::llm::MockBackend;
    use crate::odg::build_odg;
    use crate::sequence::generate_sequences;
    use serde_json::json;

    fn datasets_for(spec: &ApiSpec) -> Datasets {
        let backend = MockBackend::new();
        let mut ds = Datasets::default();
        for op in &spec.operations {
            let cs = detect_inter_param_constraints(op, &backend);
            let valid = generate_dataset(op, &cs, DatasetMode::Valid, &backend).unwrap();
            let mut invalid = generate_dataset(op, &cs, DatasetMode::Invalid, &backend).unwrap();
            invalid.items.extend(mutate_for_failure(op, &valid, &cs, 7).items);
            ds.valid.insert(op.id.clone(), valid);
            ds.invalid.insert(op.id.clone(), invalid);
        }
        ds
    }

    fn plan_for(spec: &ApiSpec) -> TestPlan {
        let (g, _, _) = build_odg(spec, &MockBackend::new());
        let seqs = generate_sequences(&g, spec).unwrap();
        build_plan(spec, &seqs, &datasets_for(spec), &g, 7).unwrap()
    }

    #[test]
    fn booking_success_cases_follow_fig11() {
        let plan = plan_for(&fixtures::flight_booking());
        let booking: Vec<_> = plan
            .cases
            .iter()
            .filter(|c| c.target_op == "post-/booking" && c.kind == CaseKind::Success2xx)
            .collect();
        assert_eq!(booking.len(), 10);
        for c in &booking {
            let ops: Vec<_> = c.steps.iter().map(|s| s.op_id.as_str()).collect();
            assert_eq!(ops, ["get-/flights", "post-/booking"]);
            assert_eq!(c.steps[1].bindings_in[0].extraction_path, "[0].id");
            assert_eq!(c.steps[1].bindings_in[0].into_param, "flightId");
            assert_eq!(c.steps[1].bindings_in[0].location, ParamLocation::Query);
            assert_eq!(c.expected_status, 200);
        }
        let flights: Vec<_> = plan.cases.iter().filter(|c| c.target_op == "get-/flights").collect();
        assert_eq!(flights.len(), 1);
        assert_eq!(flights[0].steps.len(), 1);
    }

    #[test]
    fn item_code_201_is_kept_when_documented() {
        let doc = r#"{"openapi":"3.0.0","info":{"title":"t"},"paths":{"/a":{"post":{
            "parameters":[{"name":"q","in":"query","schema":{"type":"string"}}],
            "responses":{"201":{"description":""}}}}}}"#;
        let spec = crate::oas::parse_spec(doc.as_bytes(), crate::oas::DocumentFormat::Json).unwrap();
        let op = &spec.operations[0];
        assert_eq!(clip_expected(op, 201), (201, false));
        assert_eq!(clip_expected(op, 200), (201, false));
        assert_eq!(clip_expected(op, 400), (400, true));
        let mut ds = Datasets::default();
        ds.valid.insert(
            op.id.clone(),
            Dataset {
                op_id: op.id.clone(),
                mode: DatasetMode::Valid,
                items: vec![DataItem { data: json!({"q": "x"}).as_object().unwrap().clone(), expected_code: 201 }],
                provenance: DataProvenance::Llm,
            },
        );
        let (g, _, _) = build_odg(&spec, &MockBackend::new());
        let seqs = generate_sequences(&g, &spec).unwrap();
        let cases = assemble_2xx_cases(&seqs, &ds, &spec).unwrap();
        assert_eq!(cases[0].expected_status, 201);
        assert_eq!(cases[0].steps[0].query_parameters["q"], "x");
    }

    #[test]
    fn missing_dataset_is_an_error() {
        let spec = fixtures::flight_booking();
        let (g, _, _) = build_odg(&spec, &MockBackend::new());
        let seqs = generate_sequences(&g, &spec).unwrap();
        assert!(matches!(
            assemble_2xx_cases(&seqs, &Datasets::default(), &spec),
            Err(PlanError::MissingDataset(_))
        ));
    }

    #[test]
    fn delete_is_inserted_for_documented_404() {
        let plan = plan_for(&fixtures::flight_booking_extended());
        let inserted: Vec<_> = plan.cases.iter().filter(|c| c.expected_status == 404).collect();
        assert_eq!(inserted.len(), 1);
        let c = inserted[0];
        let ops: Vec<_> = c.steps.iter().map(|s| s.op_id.as_str()).collect();
        assert_eq!(ops, ["get-/flights", "delete-/flights/{id}", "post-/booking"]);
        assert_eq!(c.steps[1].bindings_in[0].extraction_path, "[0].id");
        assert_eq!(c.steps[1].bindings_in[0].location, ParamLocation::Path);
        assert_eq!(c.steps[2].bindings_in[0].from_step, 0);
        assert_eq!(c.kind, CaseKind::Failure4xx);
    }

    #[test]
    fn substitution_cases_differ_only_in_target_data() {
        let plan = plan_for(&fixtures::flight_booking_extended());
        let success: Vec<_> = plan.cases.iter().filter(|c| c.kind == CaseKind::Success2xx).collect();
        for c in plan.cases.iter().filter(|c| c.id.contains("#4xx-")) {
            let template = success
                .iter()
                .find(|s| s.target_op == c.target_op && s.steps[..s.steps.len() - 1] == c.steps[..c.steps.len() - 1])
                .expect("template");
            assert_eq!(template.steps.last().unwrap().bindings_in, c.steps.last().unwrap().bindings_in);
            assert!(StatusRange::ClientError.contains(c.expected_status));
        }
    }

    #[test]
    fn no_invalid_data_and_no_delete_gives_one_skip() {
        let plan = plan_for(&fixtures::flight_booking());
        let skips: Vec<_> = plan.skipped.iter().filter(|s| s.target_op == "get-/flights").collect();
        assert_eq!(skips.len(), 1);
        assert!(!plan.cases.iter().any(|c| c.target_op == "get-/flights" && c.kind == CaseKind::Failure4xx));
    }

    #[test]
    fn plan_round_trips_and_indices_are_in_range() {
        let spec = fixtures::flight_booking_extended();
        let plan = plan_for(&spec);
        assert_eq!(TestPlan::from_json(&plan.to_json()).unwrap(), plan);
        let ds = datasets_for(&spec);
        let mut ids = std::collections::BTreeSet::new();
        for c in &plan.cases {
            assert!(ids.insert(c.id.clone()), "duplicate id {}", c.id);
            let set = if c.data_item_ref.file.ends_with(".valid.json") { &ds.valid } else { &ds.invalid };
            assert!(c.data_item_ref.index < set[&c.target_op].items.len());
        }
        assert_eq!(plan.spec_fingerprint, spec.fingerprint());
    }

    #[test]
    fn null_query_values_are_omitted() {
        let spec = fixtures::flight_booking_extended();
        let op = spec.operation("post-/booking").unwrap();
        let data = json!({"flightId": null, "passengerName": null}).as_object().unwrap().clone();
        let step = TestStep::from_item(op, &data);
        assert!(step.query_parameters.is_empty());
        assert_eq!(step.body, Some(json!({"passengerName": null})));
    }
}
