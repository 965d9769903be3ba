//! Reply grammars for the three prompt families.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::LlmError;

/// Parser output plus the number of non-blank lines that were discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub items: Vec<T>,
    pub dropped: usize,
}

/// `<param> -> <Schema>.<field>`
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArrowMapping {
    pub param_name: String,
    pub schema_name: String,
    pub schema_field: String,
}

impl ArrowMapping {
    pub fn new(param: &str, schema: &str, field: &str) -> Self {
        Self {
            param_name: param.to_string(),
            schema_name: schema.to_string(),
            schema_field: field.to_string(),
        }
    }
}

/// Strip list bullets, numbering and surrounding backticks/quotes.
fn clean_line(line: &str) -> &str {
    let mut s = line.trim();
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = s.strip_prefix(bullet) {
            s = rest.trim_start();
        }
    }
    // "1. foo" / "1) foo"
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(rest) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            s = rest.trim_start();
        }
    }
    s
}

fn strip_ticks(token: &str) -> &str {
    token.trim().trim_matches(|c| c == '`' || c == '"' || c == '\'').trim()
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '$' | '@'))
}

fn parse_arrow_line(line: &str) -> Option<ArrowMapping> {
    let line = clean_line(line);
    let (lhs, rhs) = line.split_once("->")?;
    let param = strip_ticks(lhs);
    let rhs = strip_ticks(rhs.trim().trim_end_matches([',', ';', '.']));
    let (schema, field) = rhs.split_once('.')?;
    let (schema, field) = (strip_ticks(schema), strip_ticks(field));
    (is_ident(param) && is_ident(schema) && is_ident(field))
        .then(|| ArrowMapping::new(param, schema, field))
}

/// Parse `<param> -> <Schema>.<field>` lines.
///
/// Bullets, numbering and backticks around names are tolerated. A reply
/// with text but no mapping at all is [`LlmError::EmptyParse`]; an empty
/// reply is a valid "no dependencies" answer.
pub fn parse_arrow_lines(reply: &str) -> Result<Parsed<ArrowMapping>, LlmError> {
    let mut items = Vec::new();
    let mut dropped = 0;
    for line in reply.lines().filter(|l| !l.trim().is_empty()) {
        match parse_arrow_line(line) {
            Some(m) => items.push(m),
            None => dropped += 1,
        }
    }
    if items.is_empty() && dropped > 0 {
        return Err(LlmError::EmptyParse { dropped });
    }
    Ok(Parsed { items, dropped })
}

/// Inverse of [`parse_arrow_lines`] for well-formed mappings.
pub fn format_arrow_lines(mappings: &[ArrowMapping]) -> String {
    mappings
        .iter()
        .map(|m| format!("{} -> {}.{}", m.param_name, m.schema_name, m.schema_field))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One schema name per line; names outside `known_schemas` are dropped.
pub fn parse_schema_list(reply: &str, known_schemas: &BTreeSet<String>) -> Parsed<String> {
    let mut items: Vec<String> = Vec::new();
    let mut dropped = 0;
    for line in reply.lines().filter(|l| !l.trim().is_empty()) {
        let name = strip_ticks(clean_line(line).trim_end_matches([',', ';', '.']));
        if known_schemas.contains(name) {
            if !items.iter().any(|n| n == name) {
                items.push(name.to_string());
            }
        } else {
            dropped += 1;
        }
    }
    Parsed { items, dropped }
}

/// A dataset line before data-gen assigns a default status.
#[derive(Debug, Clone, PartialEq)]
pub struct RawItem {
    pub data: Map<String, Value>,
    pub expected_code: Option<u16>,
}

/// Parse a JSONL reply. Accepts both `{"data": {...}, "expected_code": N}`
/// and bare objects of parameter values.
pub fn parse_jsonl_dataset(reply: &str) -> Result<Parsed<RawItem>, LlmError> {
    let mut items = Vec::new();
    let mut dropped = 0;
    for line in reply.lines() {
        let line = line.trim().trim_end_matches(',');
        if line.is_empty() || line.starts_with("```") || line == "[" || line == "]" {
            continue;
        }
        match serde_json::from_str::<Value>(line) {
            Ok(Value::Object(obj)) => items.push(raw_item(obj)),
            _ => dropped += 1,
        }
    }
    if items.is_empty() {
        return Err(LlmError::EmptyParse { dropped });
    }
    Ok(Parsed { items, dropped })
}

fn raw_item(mut obj: Map<String, Value>) -> RawItem {
    let code = obj
        .get("expected_code")
        .and_then(|c| match c {
            Value::Number(n) => n.as_u64(),
            Value::String(s) => s.trim().parse().ok(),
            _ => None,
        })
        .and_then(|c| u16::try_from(c).ok());
    match obj.remove("data") {
        Some(Value::Object(data)) => RawItem {
            data,
            expected_code: code,
        },
        Some(other) => {
            obj.insert("data".into(), other);
            obj.remove("expected_code");
            RawItem {
                data: obj,
                expected_code: code,
            }
        }
        None => {
            obj.remove("expected_code");
            RawItem {
                data: obj,
                expected_code: code,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fig6_arrow_reply() {
        let got = parse_arrow_lines("flightId -> Flight.id\nflightId -> Booking.flight").unwrap();
        assert_eq!(
            got.items,
            [
                ArrowMapping::new("flightId", "Flight", "id"),
                ArrowMapping::new("flightId", "Booking", "flight")
            ]
        );
        assert_eq!(got.dropped, 0);
    }

    #[test]
    fn empty_reply_is_no_dependencies() {
        let got = parse_arrow_lines("").unwrap();
        assert!(got.items.is_empty());
        assert!(parse_arrow_lines("  \n\n").unwrap().items.is_empty());
    }

    #[test]
    fn refusal_replies_signal_reprompt() {
        for reply in [
            "no dependencies found",
            "I'm sorry, I cannot determine that.",
            "The operation has no prerequisites.",
            "flightId: Flight.id",
        ] {
            assert!(
                matches!(parse_arrow_lines(reply), Err(LlmError::EmptyParse { .. })),
                "{reply}"
            );
        }
    }

    #[test]
    fn tolerates_bullets_and_backticks() {
        let reply = "Here you go:\n- `flightId` -> `Flight.id`\n* flightId -> `Booking`.`flight`\n2. userId -> User.id,";
        let got = parse_arrow_lines(reply).unwrap();
        assert_eq!(got.items.len(), 3);
        assert_eq!(got.items[1], ArrowMapping::new("flightId", "Booking", "flight"));
        assert_eq!(got.items[2], ArrowMapping::new("userId", "User", "id"));
        assert_eq!(got.dropped, 1);
    }

    #[test]
    fn schema_list_guards_against_invented_names() {
        let known: BTreeSet<String> = ["Flight", "Booking"].map(String::from).into();
        assert_eq!(parse_schema_list("Flight", &known).items, ["Flight"]);
        let got = parse_schema_list("Flight\nPassenger", &known);
        assert_eq!(got.items, ["Flight"]);
        assert_eq!(got.dropped, 1);
        assert!(parse_schema_list("", &known).items.is_empty());
        assert_eq!(parse_schema_list("- `Flight`\nFlight", &known).items, ["Flight"]);
    }

    #[test]
    fn fig12_valid_items() {
        let reply = r#"{"data": {"departureDate": "2022-12-01", "arrivalDate": "2022-12-02", "passengerName": "John Doe", "passengerAge": 30}, "expected_code": 200}
{"data": {"departureDate": "2022-11-15", "arrivalDate": "2022-11-16", "passengerName": "Jane Smith", "passengerAge": 25}, "expected_code": 200}"#;
        let got = parse_jsonl_dataset(reply).unwrap();
        assert_eq!(got.items.len(), 2);
        assert!(got.items.iter().all(|i| i.expected_code == Some(200)));
        assert_eq!(got.items[1].data["passengerName"], "Jane Smith");
    }

    #[test]
    fn preamble_is_dropped() {
        let reply = "Here are the items:\n```json\n{\"a\": 1}\n{\"a\": 2, \"expected_code\": 400}\n```";
        let got = parse_jsonl_dataset(reply).unwrap();
        assert_eq!(got.items.len(), 2);
        assert_eq!(got.dropped, 1);
        assert_eq!(got.items[0].expected_code, None);
        assert_eq!(got.items[1].expected_code, Some(400));
        assert!(!got.items[1].data.contains_key("expected_code"));
    }

    #[test]
    fn pure_prose_is_empty_parse() {
        assert!(matches!(
            parse_jsonl_dataset("I cannot generate that dataset."),
            Err(LlmError::EmptyParse { dropped: 1 })
        ));
    }

    fn ident() -> impl Strategy<Value = String> {
        "[A-Za-z][A-Za-z0-9_]{0,12}"
    }

    proptest! {
        #[test]
        fn arrow_lines_round_trip(mappings in proptest::collection::vec((ident(), ident(), ident()), 0..8)) {
            let mappings: Vec<_> = mappings
                .iter()
                .map(|(p, s, f)| ArrowMapping::new(p, s, f))
                .collect();
            let parsed = parse_arrow_lines(&format_arrow_lines(&mappings)).unwrap();
            prop_assert_eq!(parsed.items, mappings);
            prop_assert_eq!(parsed.dropped, 0);
        }
    }
}
