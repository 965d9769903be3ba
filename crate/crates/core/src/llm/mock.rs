//! Deterministic stand-in for a hosted model.
//!
//! The reply is a pure function of the template id and the rendered prompt:
//! the mock reads back the operation, parameters and schemas from the prompt
//! text and applies fixed matching rules.

use std::collections::BTreeSet;

use chrono::{Duration, NaiveDate};
use serde_json::{json, Map, Value};

use super::parse::{format_arrow_lines, ArrowMapping};
use super::prompts::{
    CATALOG_BLOCK, DATASET_SIZE, INVALID_INSTRUCTION, OPERATION_BLOCK, OPERATION_INFO, SCHEMA_BLOCK,
    VALID_INSTRUCTION,
};
use super::{LlmBackend, LlmError, PromptRequest, TemplateId};
use crate::datagen::{
    mutation, Expr, DEFAULT_INVALID_CODE, DEFAULT_VALID_CODE, HINT_NULL, HINT_OMIT, HINT_RETYPE,
    SATISFY_PREFIX, VIOLATE_PREFIX,
};
use crate::oas::{FieldDef, ParamLocation, ParameterDef, PrimitiveType, SchemaDef};
use crate::tokens::token_set;

/// Tokens that mark a field as an identifier.
const ID_TOKENS: [&str; 2] = ["id", "uuid"];
/// Numeric parameters whose names contain one of these must be positive.
const POSITIVE_TOKENS: [&str; 5] = ["age", "quantity", "count", "price", "amount"];

const NAMES: [&str; 10] = [
    "John Doe",
    "Jane Smith",
    "Ana Lima",
    "Omar Haddad",
    "Mei Chen",
    "Lucas Rossi",
    "Priya Nair",
    "Tom Becker",
    "Sara Kim",
    "Ivan Petrov",
];

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    overrides: Vec<(TemplateId, String, String)>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Answer `reply` to `template` prompts containing `needle` (an empty
    /// needle matches every prompt). Earlier overrides win.
    pub fn with_reply(mut self, template: TemplateId, needle: &str, reply: &str) -> Self {
        self.overrides
            .push((template, needle.to_string(), reply.to_string()));
        self
    }

    pub fn reply(&self, template: TemplateId, text: &str) -> String {
        if let Some((_, _, reply)) = self
            .overrides
            .iter()
            .find(|(t, needle, _)| *t == template && text.contains(needle.as_str()))
        {
            return reply.clone();
        }
        match template {
            TemplateId::OsDep => os_reply(text),
            TemplateId::SsDep => ss_reply(text),
            TemplateId::Dataset => dataset_reply(text),
            TemplateId::Constraints => constraints_reply(text),
        }
    }
}

impl LlmBackend for MockBackend {
    fn complete(&self, req: &PromptRequest) -> Result<String, LlmError> {
        Ok(self.reply(req.template_id, &req.rendered_text))
    }

    fn name(&self) -> &'static str {
        "mock"
    }
}

fn is_id_like(field: &str) -> bool {
    crate::tokens::tokenize(field)
        .last()
        .is_some_and(|t| ID_TOKENS.contains(&t.as_str()))
}

/// Operation-schema rule. Parameter `p` maps to `S.f` when
///
/// * `f` is an identifier and `p` has the same tokens as `f`, or contains
///   the tokens of both `S` and `f` (`flightId` → `Flight.id`), or
/// * `f` references a schema `T` with an identifier field `i`, and `p`
///   contains the tokens of `f` and `i` (`flightId` → `Booking.flight`).
pub fn mock_os_mappings(params: &[ParameterDef], schemas: &[&SchemaDef]) -> Vec<ArrowMapping> {
    let mut out = Vec::new();
    for p in params {
        let pt = token_set(&p.name);
        for s in schemas {
            let st = token_set(&s.name);
            for (fname, field) in &s.fields {
                let ft = token_set(fname);
                let direct = is_id_like(fname)
                    && (pt == ft || (pt.is_superset(&ft) && pt.is_superset(&st)));
                let via_ref = field.schema_ref.as_ref().is_some_and(|target| {
                    schemas
                        .iter()
                        .filter(|t| &t.name == target)
                        .flat_map(|t| t.fields.keys())
                        .filter(|k| is_id_like(k))
                        .any(|k| {
                            let want: BTreeSet<String> = ft.union(&token_set(k)).cloned().collect();
                            pt.is_superset(&want)
                        })
                });
                if direct || via_ref {
                    out.push(ArrowMapping::new(&p.name, &s.name, fname));
                }
            }
        }
    }
    out
}

/// Schema-schema rule: `C` is a prerequisite of `K` when a field of `K`
/// references `C`, or a field of `K` is named like `<C>Id`.
pub fn mock_schema_prerequisites(schema: &SchemaDef, schemas: &[&SchemaDef]) -> Vec<String> {
    let mut out = Vec::new();
    for c in schemas {
        if c.name == schema.name {
            continue;
        }
        let mut id_tokens = token_set(&c.name);
        id_tokens.insert("id".into());
        let needed = schema.fields.iter().any(|(fname, f)| {
            f.schema_ref.as_deref() == Some(c.name.as_str()) || token_set(fname) == id_tokens
        });
        if needed {
            out.push(c.name.clone());
        }
    }
    out
}

// ------------------------------------------------------------ prompt reading

fn indent(line: &str) -> usize {
    line.len() - line.trim_start_matches(' ').len()
}

/// Lines following the line equal to `marker`, up to the next blank line.
fn block_after<'a>(text: &'a str, marker: &str) -> Vec<&'a str> {
    text.lines()
        .skip_while(|l| *l != marker)
        .skip(1)
        .take_while(|l| !l.trim().is_empty())
        .collect()
}

/// Read schemas rendered at `base` indentation.
fn read_schemas(lines: &[&str], base: usize) -> Vec<SchemaDef> {
    let mut out: Vec<SchemaDef> = Vec::new();
    for line in lines {
        let depth = indent(line);
        let body = line.trim();
        if depth == base {
            if let Some(name) = body.strip_suffix(':') {
                out.push(SchemaDef::empty(name));
            }
            continue;
        }
        let Some(schema) = out.last_mut() else { continue };
        if depth == base + 2 {
            let (name, ty) = match body.split_once(": ") {
                Some((n, t)) => (n, PrimitiveType::parse(t.trim()).unwrap_or(PrimitiveType::Object)),
                None => (body.trim_end_matches(':'), PrimitiveType::Object),
            };
            schema.fields.insert(
                name.to_string(),
                FieldDef {
                    ty,
                    format: None,
                    description: String::new(),
                    schema_ref: None,
                    required: false,
                },
            );
        } else if let Some((_, field)) = schema.fields.last_mut() {
            if body == "type: array" {
                field.ty = PrimitiveType::Array;
            } else if let Some(r) = body.strip_prefix("$ref:") {
                let r = r.trim().trim_matches(['\'', '"']);
                field.schema_ref = r.rsplit('/').next().map(str::to_string);
            }
        }
    }
    out
}

fn catalog(text: &str) -> Vec<SchemaDef> {
    let lines = block_after(text, CATALOG_BLOCK);
    read_schemas(lines.get(1..).unwrap_or_default(), 2)
}

fn plain_param(name: &str, ty: PrimitiveType) -> ParameterDef {
    ParameterDef {
        name: name.to_string(),
        location: ParamLocation::Query,
        ty,
        format: None,
        description: String::new(),
        required: false,
        pointer: None,
    }
}

fn os_reply(text: &str) -> String {
    let params: Vec<ParameterDef> = block_after(text, OPERATION_BLOCK)
        .iter()
        .skip(1)
        .filter_map(|l| l.trim().split_once(": "))
        .map(|(n, t)| plain_param(n, PrimitiveType::parse(t).unwrap_or(PrimitiveType::String)))
        .collect();
    let schemas = catalog(text);
    let refs: Vec<&SchemaDef> = schemas.iter().collect();
    format_arrow_lines(&mock_os_mappings(&params, &refs))
}

fn ss_reply(text: &str) -> String {
    let Some(schema) = read_schemas(&block_after(text, SCHEMA_BLOCK), 0).into_iter().next() else {
        return String::new();
    };
    let schemas = catalog(text);
    let refs: Vec<&SchemaDef> = schemas.iter().collect();
    mock_schema_prerequisites(&schema, &refs).join("\n")
}

/// `  name (location, type[, format f][, required]): description`
fn read_constraint_params(text: &str) -> Vec<ParameterDef> {
    let mut out = Vec::new();
    for line in block_after(text, OPERATION_BLOCK).iter().skip(1) {
        let Some((head, description)) = line.trim().split_once("): ") .or_else(|| {
            line.trim().strip_suffix("):").map(|h| (h, ""))
        }) else {
            continue;
        };
        let Some((name, attrs)) = head.split_once(" (") else { continue };
        let attrs: Vec<&str> = attrs.split(", ").collect();
        let mut p = plain_param(
            name,
            attrs
                .get(1)
                .and_then(|t| PrimitiveType::parse(t))
                .unwrap_or(PrimitiveType::String),
        );
        p.description = description.to_string();
        p.required = attrs.contains(&"required");
        p.format = attrs
            .iter()
            .find_map(|a| a.strip_prefix("format "))
            .map(str::to_string);
        out.push(p);
    }
    out
}

/// `after X` / `before X` in a description, and positivity for counts,
/// ages, prices and amounts.
fn constraints_reply(text: &str) -> String {
    let params = read_constraint_params(text);
    let names: BTreeSet<&str> = params.iter().map(|p| p.name.as_str()).collect();
    let mut lines = Vec::new();
    for p in &params {
        let words: Vec<&str> = p
            .description
            .split_whitespace()
            .map(|w| w.trim_matches(|c: char| !(c.is_alphanumeric() || c == '_')))
            .collect();
        for pair in words.windows(2) {
            let other = pair[1];
            if other == p.name || !names.contains(other) {
                continue;
            }
            match pair[0].to_ascii_lowercase().as_str() {
                "after" => lines.push(format!("{other} < {}", p.name)),
                "before" => lines.push(format!("{} < {other}", p.name)),
                _ => {}
            }
        }
        let numeric = matches!(p.ty, PrimitiveType::Integer | PrimitiveType::Number);
        if numeric && token_set(&p.name).iter().any(|t| POSITIVE_TOKENS.contains(&t.as_str())) {
            lines.push(format!("{} > 0", p.name));
        }
    }
    lines.join("\n")
}

fn dataset_params(info: &Value) -> Vec<ParameterDef> {
    let Some(list) = info.get("parameters").and_then(Value::as_array) else {
        return Vec::new();
    };
    list.iter()
        .filter_map(|p| {
            let location = match p.get("in")?.as_str()? {
                "path" => ParamLocation::Path,
                "header" => ParamLocation::Header,
                "body-field" => ParamLocation::BodyField,
                _ => ParamLocation::Query,
            };
            Some(ParameterDef {
                name: p.get("name")?.as_str()?.to_string(),
                location,
                ty: PrimitiveType::parse(p.get("type")?.as_str()?)?,
                format: p.get("format").and_then(Value::as_str).map(str::to_string),
                description: String::new(),
                required: p.get("required").and_then(Value::as_bool).unwrap_or(false),
                pointer: None,
            })
        })
        .collect()
}

fn base_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2031, 3, 1).expect("valid date")
}

/// Deterministic plausible value for item `k`; `date_rank` orders the date
/// fields of one item so earlier-declared dates come first.
fn synth_value(p: &ParameterDef, k: usize, date_rank: usize) -> Value {
    let tokens = token_set(&p.name);
    let has = |t: &str| tokens.contains(t);
    match p.ty {
        PrimitiveType::String if p.is_date() => {
            let day = base_date() + Duration::days((k * 5 + date_rank) as i64);
            if p.format.as_deref() == Some("date-time") {
                json!(format!("{}T10:00:00Z", day.format("%Y-%m-%d")))
            } else {
                json!(day.format("%Y-%m-%d").to_string())
            }
        }
        PrimitiveType::String if has("email") => json!(format!("user{k}@example.com")),
        PrimitiveType::String if has("name") => json!(NAMES[k % NAMES.len()]),
        PrimitiveType::String => json!(format!("{}-{}", p.name, k + 1)),
        PrimitiveType::Integer if has("age") => json!(20 + (k * 7) % 50),
        PrimitiveType::Integer => json!(k + 1),
        PrimitiveType::Number => json!(10.5 + k as f64),
        PrimitiveType::Boolean => json!(k % 2 == 0),
        PrimitiveType::Array => json!([]),
        PrimitiveType::Object => json!({}),
    }
}

fn valid_item(params: &[ParameterDef], k: usize, satisfy: &[Expr]) -> Map<String, Value> {
    let mut data = Map::new();
    let mut date_rank = 0;
    for p in params {
        data.insert(p.name.clone(), synth_value(p, k, date_rank));
        if p.is_date() {
            date_rank += 1;
        }
    }
    for e in satisfy {
        e.satisfy(&mut data);
    }
    data
}

enum Scenario {
    Violate(Expr),
    Omit,
    Retype,
    Null,
}

/// Apply `scenarios[k]`, falling through the list until one applies.
fn break_item(params: &[ParameterDef], data: &mut Map<String, Value>, k: usize, scenarios: &[Scenario]) {
    for step in 0..scenarios.len() {
        let mut trial = data.clone();
        let applied = match &scenarios[(k + step) % scenarios.len()] {
            Scenario::Violate(e) => e.violate(&mut trial),
            Scenario::Omit => mutation::drop_required(params, &mut trial, k),
            Scenario::Retype => mutation::retype(params, &mut trial, k),
            Scenario::Null => mutation::null_required(params, &mut trial, k),
        };
        if applied {
            *data = trial;
            return;
        }
    }
}

fn dataset_reply(text: &str) -> String {
    let mut lines = text.lines();
    lines.next();
    let valid = match lines.next() {
        Some(VALID_INSTRUCTION) => true,
        Some(INVALID_INSTRUCTION) => false,
        _ => return "I can only generate data for a described operation.".into(),
    };
    let hints: Vec<&str> = lines
        .take_while(|l| !l.trim().is_empty())
        .filter_map(|l| l.strip_prefix("- "))
        .collect();
    let info: Value = text
        .lines()
        .find_map(|l| l.strip_prefix(OPERATION_INFO))
        .and_then(|j| serde_json::from_str(j).ok())
        .unwrap_or(Value::Null);
    let params = dataset_params(&info);
    let codes: Vec<u16> = info
        .get("responses")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|c| c.as_u64()).map(|c| c as u16).collect())
        .unwrap_or_default();
    let code = if valid {
        codes.iter().copied().find(|c| (200..300).contains(c)).unwrap_or(DEFAULT_VALID_CODE)
    } else {
        DEFAULT_INVALID_CODE
    };

    let satisfy: Vec<Expr> = hints
        .iter()
        .filter_map(|h| h.strip_prefix(SATISFY_PREFIX))
        .filter_map(|e| e.parse().ok())
        .collect();
    let mut scenarios: Vec<Scenario> = hints
        .iter()
        .filter_map(|h| match *h {
            HINT_OMIT => Some(Scenario::Omit),
            HINT_RETYPE => Some(Scenario::Retype),
            HINT_NULL => Some(Scenario::Null),
            other => other
                .strip_prefix(VIOLATE_PREFIX)
                .and_then(|e| e.parse().ok())
                .map(Scenario::Violate),
        })
        .collect();
    if scenarios.is_empty() {
        scenarios = vec![Scenario::Omit, Scenario::Retype, Scenario::Null];
    }

    (0..DATASET_SIZE)
        .map(|k| {
            let mut data = valid_item(&params, k, &satisfy);
            if !valid {
                break_item(&params, &mut data, k, &scenarios);
            }
            json!({"data": data, "expected_code": code}).to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::llm::{build_os_prompt, build_ss_prompt, parse_arrow_lines, parse_jsonl_dataset};
    use crate::oas::get_parameters;
    use proptest::prelude::*;

    fn os_reply_for(spec: &crate::ApiSpec, op_id: &str) -> String {
        let op = spec.operation(op_id).unwrap();
        let params = get_parameters(spec, op_id).unwrap();
        let schemas: Vec<_> = spec.schemas.values().collect();
        MockBackend::new()
            .complete(&build_os_prompt(op, &params, &schemas))
            .unwrap()
    }

    #[test]
    fn booking_os_reply_matches_fig6() {
        let reply = os_reply_for(&fixtures::flight_booking(), "post-/booking");
        assert_eq!(reply, "flightId -> Flight.id\nflightId -> Booking.flight");
    }

    #[test]
    fn delete_id_maps_to_flight_id() {
        let reply = os_reply_for(&fixtures::flight_booking_extended(), "delete-/flights/{id}");
        assert_eq!(reply, "id -> Flight.id");
    }

    #[test]
    fn ss_replies() {
        let spec = fixtures::flight_booking();
        let schemas: Vec<_> = spec.schemas.values().collect();
        let mock = MockBackend::new();
        let flight = mock.complete(&build_ss_prompt(&spec.schemas["Flight"], &schemas)).unwrap();
        let booking = mock.complete(&build_ss_prompt(&spec.schemas["Booking"], &schemas)).unwrap();
        assert_eq!(flight, "");
        assert_eq!(booking, "Flight");
    }

    #[test]
    fn replies_are_pure() {
        let a = os_reply_for(&fixtures::flight_booking(), "post-/booking");
        let b = os_reply_for(&fixtures::flight_booking(), "post-/booking");
        assert_eq!(a.as_bytes(), b.as_bytes());
    }

    #[test]
    fn overrides_take_precedence() {
        let mock = MockBackend::new().with_reply(TemplateId::OsDep, "post-/booking", "no dependencies found");
        let spec = fixtures::flight_booking();
        let op = spec.operation("post-/booking").unwrap();
        let schemas: Vec<_> = spec.schemas.values().collect();
        let reply = mock.complete(&build_os_prompt(op, &op.all_parameters(), &schemas)).unwrap();
        assert!(parse_arrow_lines(&reply).is_err());
    }

    #[test]
    fn valid_dataset_has_ten_future_items() {
        let spec = fixtures::flight_booking_extended();
        let op = spec.operation("post-/booking").unwrap();
        let hints = vec![format!("{SATISFY_PREFIX}(date< departureDate arrivalDate)")];
        let req = super::super::build_dataset_prompt(op, &[], crate::DatasetMode::Valid, &hints);
        let items = parse_jsonl_dataset(&MockBackend::new().complete(&req).unwrap()).unwrap().items;
        assert_eq!(items.len(), 10);
        assert_eq!(items[0].data["departureDate"], "2031-03-01");
        assert_eq!(items[0].data["arrivalDate"], "2031-03-02");
        assert_eq!(items[1].data["passengerAge"], 27);
        assert!(items.iter().all(|i| i.expected_code == Some(200)));
    }

    fn ident_from(tokens: &[&str]) -> String {
        tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i == 0 {
                    t.to_string()
                } else {
                    let mut c = t.chars();
                    c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
                }
            })
            .collect()
    }

    fn word() -> impl Strategy<Value = &'static str> {
        prop::sample::select(vec!["flight", "user", "order", "id", "uuid", "name", "seat", "code"])
    }

    proptest! {
        /// Independent restatement of the rule over random camelCase names.
        #[test]
        fn os_rule_contract(
            p in prop::collection::vec(word(), 1..4),
            s in prop::collection::vec(word(), 1..3),
            f in prop::collection::vec(word(), 1..3),
        ) {
            let (pn, sn, fname) = (ident_from(&p), ident_from(&s), ident_from(&f));
            let mut schema = SchemaDef::empty(sn.clone());
            schema.fields.insert(fname.clone(), FieldDef {
                ty: PrimitiveType::Integer, format: None, description: String::new(),
                schema_ref: None, required: false,
            });
            let param = plain_param(&pn, PrimitiveType::Integer);
            let got = !mock_os_mappings(&[param], &[&schema]).is_empty();

            let set = |v: &[&str]| v.iter().map(|t| t.to_string()).collect::<BTreeSet<_>>();
            let (pt, st, ft) = (set(&p), set(&s), set(&f));
            let id_like = ["id", "uuid"].contains(f.last().unwrap());
            let want = id_like && (pt == ft || (pt.is_superset(&ft) && pt.is_superset(&st)));
            prop_assert_eq!(got, want);
        }
    }
}
