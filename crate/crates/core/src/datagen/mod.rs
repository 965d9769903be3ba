//! Valid and invalid test data per operation.
//!
//! The backend proposes items, [`ConstraintSet`] predicates and a
//! structural check filter them, and [`mutate_for_failure`] derives extra
//! invalid items from valid ones.

pub(crate) mod mutation;
pub mod predicate;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::llm::{
    self, build_constraint_prompt, build_dataset_prompt, parse_jsonl_dataset, LlmBackend, LlmError,
};
use crate::oas::{is_2xx, is_4xx, OperationDef, ParameterDef, PrimitiveType, SchemaDef};
pub use predicate::{CmpOp, Expr, Operand, PredicateError};

pub const HINT_OMIT: &str = "omit a required field";
pub const HINT_RETYPE: &str = "give a field a value of the wrong type";
pub const HINT_NULL: &str = "set a required field to null";
pub const SATISFY_PREFIX: &str = "satisfy: ";
pub const VIOLATE_PREFIX: &str = "violate: ";

pub const DEFAULT_VALID_CODE: u16 = 200;
pub const DEFAULT_INVALID_CODE: u16 = 400;

#[derive(Debug, Error)]
pub enum DataGenError {
    #[error("no usable {mode} items for `{op_id}` after regeneration")]
    EmptyDataset { op_id: String, mode: DatasetMode },
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    Valid,
    Invalid,
}

impl DatasetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetMode::Valid => "valid",
            DatasetMode::Invalid => "invalid",
        }
    }

    pub fn default_code(self) -> u16 {
        match self {
            DatasetMode::Valid => DEFAULT_VALID_CODE,
            DatasetMode::Invalid => DEFAULT_INVALID_CODE,
        }
    }

    pub fn admits(self, code: u16) -> bool {
        match self {
            DatasetMode::Valid => is_2xx(code),
            DatasetMode::Invalid => is_4xx(code),
        }
    }
}

impl std::fmt::Display for DatasetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataProvenance {
    Llm,
    Mutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataItem {
    pub data: Map<String, Value>,
    pub expected_code: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub op_id: String,
    pub mode: DatasetMode,
    pub items: Vec<DataItem>,
    pub provenance: DataProvenance,
}

impl Dataset {
    /// File name under `data/`.
    pub fn file_name(op_id: &str, mode: DatasetMode) -> String {
        format!("{}.{}.json", file_stem(op_id), mode.as_str())
    }
}

/// Operation ids contain `/` and braces; make them safe as file names.
pub fn file_stem(op_id: &str) -> String {
    op_id
        .chars()
        .map(|c| match c {
            '/' => '_',
            '{' | '}' => '~',
            c if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') => c,
            _ => '_',
        })
        .collect()
}

/// One detected constraint. `predicate` is `None` when the constraint text
/// could not be expressed in the predicate language; such entries are
/// reported but never enforced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintPredicate {
    pub predicate: Option<Expr>,
    pub source_description: String,
}

impl ConstraintPredicate {
    pub fn executable(expr: Expr, source: impl Into<String>) -> Self {
        Self {
            predicate: Some(expr),
            source_description: source.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub op_id: String,
    pub predicates: Vec<ConstraintPredicate>,
}

impl ConstraintSet {
    pub fn empty(op_id: impl Into<String>) -> Self {
        Self {
            op_id: op_id.into(),
            predicates: Vec::new(),
        }
    }

    pub fn executable(&self) -> impl Iterator<Item = &Expr> {
        self.predicates.iter().filter_map(|p| p.predicate.as_ref())
    }

    pub fn all_hold(&self, data: &Map<String, Value>) -> bool {
        self.executable().all(|e| e.holds(data))
    }
}

/// Evaluate one predicate against one item.
pub fn evaluate_predicate(p: &ConstraintPredicate, item: &DataItem) -> Result<bool, PredicateError> {
    match &p.predicate {
        Some(e) => e.eval(&item.data),
        None => Ok(true),
    }
}

/// Required fields present and non-null; present fields of the declared
/// type, dates included.
pub fn is_well_formed(params: &[ParameterDef], data: &Map<String, Value>) -> bool {
    params.iter().all(|p| match data.get(&p.name) {
        None | Some(Value::Null) => !p.required,
        Some(v) => {
            p.ty.admits(v)
                && (!p.is_date() || v.as_str().and_then(predicate::parse_date).is_some())
        }
    })
}

/// Ask the backend for inter-parameter constraints. Skipped entirely when no
/// parameter carries a description.
pub fn detect_inter_param_constraints(op: &OperationDef, backend: &dyn LlmBackend) -> ConstraintSet {
    let params = op.all_parameters();
    if params.iter().all(|p| p.description.trim().is_empty()) {
        return ConstraintSet::empty(&op.id);
    }
    let req = build_constraint_prompt(op, &params);
    match backend.complete(&req) {
        Ok(reply) => ConstraintSet {
            op_id: op.id.clone(),
            predicates: parse_constraint_reply(&reply, &params),
        },
        Err(e) => {
            log::warn!("constraint detection for {} failed: {e}", op.id);
            ConstraintSet::empty(&op.id)
        }
    }
}

/// One constraint per line. Lines that mention a parameter but do not fit
/// the grammar are kept as description-only entries; other prose is dropped.
pub fn parse_constraint_reply(reply: &str, params: &[ParameterDef]) -> Vec<ConstraintPredicate> {
    let mut out: Vec<ConstraintPredicate> = Vec::new();
    for line in reply.lines() {
        let text = line
            .trim()
            .trim_start_matches(['-', '*', '•'])
            .trim()
            .trim_end_matches(['.', ';', ','])
            .replace('`', "");
        if text.is_empty() {
            continue;
        }
        let entry = match parse_constraint_line(&text, params) {
            Some(e) => ConstraintPredicate::executable(e, text),
            None if mentions_param(&text, params) => ConstraintPredicate {
                predicate: None,
                source_description: text,
            },
            None => continue,
        };
        if !out.contains(&entry) {
            out.push(entry);
        }
    }
    out
}

fn mentions_param(text: &str, params: &[ParameterDef]) -> bool {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .any(|w| params.iter().any(|p| p.name == w))
}

fn parse_constraint_line(text: &str, params: &[ParameterDef]) -> Option<Expr> {
    let known = |f: &str| params.iter().any(|p| p.name == f);
    if text.starts_with('(') {
        let e: Expr = text.parse().ok()?;
        return e.fields().iter().all(|f| known(f)).then_some(e);
    }
    if let Some(args) = text.strip_prefix("requires(").and_then(|r| r.strip_suffix(')')) {
        let (a, b) = args.split_once(',')?;
        let (a, b) = (a.trim(), b.trim());
        return (known(a) && known(b) && a != b).then(|| Expr::requires(a, b));
    }
    let parts: Vec<&str> = text.split_whitespace().collect();
    let [l, op, r] = parts[..] else { return None };
    let op = CmpOp::parse(op)?;
    let left = operand(l, params)?;
    let right = operand(r, params)?;
    if !matches!(left, Operand::Field(_)) && !matches!(right, Operand::Field(_)) {
        return None;
    }
    typed_comparison(op, left, right, params)
}

fn operand(token: &str, params: &[ParameterDef]) -> Option<Operand> {
    if params.iter().any(|p| p.name == token) {
        return Some(Operand::Field(token.to_string()));
    }
    match token {
        "true" => return Some(Operand::Literal(Value::Bool(true))),
        "false" => return Some(Operand::Literal(Value::Bool(false))),
        _ => {}
    }
    if let Ok(v @ (Value::Number(_) | Value::String(_))) = serde_json::from_str::<Value>(token) {
        return Some(Operand::Literal(v));
    }
    let bare = token.trim_matches('\'');
    predicate::parse_date(bare).map(|_| Operand::Literal(Value::String(bare.to_string())))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Num,
    Str,
    Date,
    Bool,
}

fn kind(o: &Operand, params: &[ParameterDef]) -> Option<Kind> {
    match o {
        Operand::Field(f) => {
            let p = params.iter().find(|p| &p.name == f)?;
            match p.ty {
                PrimitiveType::Integer | PrimitiveType::Number => Some(Kind::Num),
                PrimitiveType::String if p.is_date() => Some(Kind::Date),
                PrimitiveType::String => Some(Kind::Str),
                PrimitiveType::Boolean => Some(Kind::Bool),
                _ => None,
            }
        }
        Operand::Literal(Value::Number(_)) => Some(Kind::Num),
        Operand::Literal(Value::String(s)) if predicate::parse_date(s).is_some() => Some(Kind::Date),
        Operand::Literal(Value::String(_)) => Some(Kind::Str),
        Operand::Literal(Value::Bool(_)) => Some(Kind::Bool),
        Operand::Literal(_) => None,
    }
}

fn typed_comparison(op: CmpOp, left: Operand, right: Operand, params: &[ParameterDef]) -> Option<Expr> {
    let lit_date = |o: &Operand| matches!(o, Operand::Literal(_));
    match (kind(&left, params)?, kind(&right, params)?) {
        (Kind::Date, Kind::Date) => Some(Expr::DateOrder { op, left, right }),
        (Kind::Num, Kind::Num) | (Kind::Str, Kind::Str) => Some(Expr::Compare { op, left, right }),
        // A date-looking literal against a plain string field.
        (Kind::Str, Kind::Date) if lit_date(&right) => Some(Expr::Compare { op, left, right }),
        (Kind::Date, Kind::Str) if lit_date(&left) => Some(Expr::Compare { op, left, right }),
        (Kind::Bool, Kind::Bool) if matches!(op, CmpOp::Eq | CmpOp::Ne) => {
            Some(Expr::Compare { op, left, right })
        }
        _ => None,
    }
}

/// Scenario lines appended to the dataset prompt.
pub fn scenario_hints(mode: DatasetMode, cs: &ConstraintSet) -> Vec<String> {
    match mode {
        DatasetMode::Valid => cs.executable().map(|e| format!("{SATISFY_PREFIX}{e}")).collect(),
        DatasetMode::Invalid => cs
            .executable()
            .map(|e| format!("{VIOLATE_PREFIX}{e}"))
            .chain([HINT_OMIT, HINT_RETYPE, HINT_NULL].map(String::from))
            .collect(),
    }
}

/// Request body and success response schemas, deduplicated by name.
pub fn referenced_schemas(op: &OperationDef) -> Vec<&SchemaDef> {
    let mut out: Vec<&SchemaDef> = Vec::new();
    let candidates = op
        .request_body_schema
        .iter()
        .chain(op.success_response().map(|(_, s)| s));
    for s in candidates {
        if !out.iter().any(|o| o.name == s.name) {
            out.push(s);
        }
    }
    out
}

/// Whether an item of `mode` survives the evaluation phase.
pub fn keep_item(mode: DatasetMode, params: &[ParameterDef], cs: &ConstraintSet, item: &DataItem) -> bool {
    if !mode.admits(item.expected_code) {
        return false;
    }
    let sound = is_well_formed(params, &item.data) && cs.all_hold(&item.data);
    match mode {
        DatasetMode::Valid => sound,
        DatasetMode::Invalid => !sound,
    }
}

/// Prompt, parse, assign default codes, and filter. An empty result triggers
/// one regeneration before giving up.
pub fn generate_dataset(
    op: &OperationDef,
    cs: &ConstraintSet,
    mode: DatasetMode,
    backend: &dyn LlmBackend,
) -> Result<Dataset, DataGenError> {
    let params = op.all_parameters();
    let dataset = |items| Dataset {
        op_id: op.id.clone(),
        mode,
        items,
        provenance: DataProvenance::Llm,
    };
    if params.is_empty() {
        // Nothing to vary: one empty request, and no way to make it invalid.
        return Ok(dataset(match mode {
            DatasetMode::Valid => vec![DataItem {
                data: Map::new(),
                expected_code: mode.default_code(),
            }],
            DatasetMode::Invalid => Vec::new(),
        }));
    }
    let mut req = build_dataset_prompt(op, &referenced_schemas(op), mode, &scenario_hints(mode, cs));
    for cycle in 0..2 {
        let parsed = llm::complete_parsed(backend, &req, parse_jsonl_dataset)?;
        let total = parsed.items.len();
        let items: Vec<DataItem> = parsed
            .items
            .into_iter()
            .map(|raw| DataItem {
                data: raw.data,
                expected_code: raw.expected_code.unwrap_or(mode.default_code()),
            })
            .filter(|item| keep_item(mode, &params, cs, item))
            .collect();
        log::debug!("{} {mode}: kept {} of {total} items (cycle {cycle})", op.id, items.len());
        if !items.is_empty() {
            return Ok(dataset(items));
        }
        req = req.with_reminder();
    }
    Err(DataGenError::EmptyDataset {
        op_id: op.id.clone(),
        mode,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MutationClass {
    DropRequired,
    Retype,
    Negate,
}

const CLASSES: [MutationClass; 3] = [MutationClass::DropRequired, MutationClass::Retype, MutationClass::Negate];

/// Deterministic invalid items from valid ones: item `i` starts at mutation
/// class `(i + seed) mod 3` and falls through to the next class when the
/// current one does not apply or leaves the item valid.
pub fn mutate_for_failure(op: &OperationDef, valid: &Dataset, cs: &ConstraintSet, seed: u64) -> Dataset {
    let params = op.all_parameters();
    let preds: Vec<&Expr> = cs.executable().collect();
    let mut items = Vec::new();
    for (i, item) in valid.items.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let pick: usize = rng.random_range(0..1024);
        let start = (i + (seed % 3) as usize) % 3;
        for class in (0..3).map(|k| CLASSES[(start + k) % 3]) {
            let mut data = item.data.clone();
            let applied = match class {
                MutationClass::DropRequired => mutation::drop_required(&params, &mut data, pick),
                MutationClass::Retype => mutation::retype(&params, &mut data, pick),
                MutationClass::Negate => {
                    !preds.is_empty()
                        && (0..preds.len()).any(|k| preds[(pick + k) % preds.len()].violate(&mut data))
                }
            };
            if applied && !(is_well_formed(&params, &data) && preds.iter().all(|e| e.holds(&data))) {
                items.push(DataItem {
                    data,
                    expected_code: DEFAULT_INVALID_CODE,
                });
                break;
            }
        }
    }
    Dataset {
        op_id: op.id.clone(),
        mode: DatasetMode::Invalid,
        items,
        provenance: DataProvenance::Mutation,
    }
}
