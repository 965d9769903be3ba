//! Closed constraint language and its interpreter.
//!
//! Canonical text form is a prefix notation:
//!
//! ```text
//! (date< departureDate arrivalDate)
//! (> passengerAge 0)
//! (or (absent coupon) (present promoCode))
//! ```
//!
//! Bare words are field references; literals are numbers, JSON strings,
//! `true`, `false` and `null`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PredicateError {
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("cannot parse predicate `{text}`: {reason}")]
    Syntax { text: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ne,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    /// Accepts the canonical symbols plus `==`, `≤`, `≥` and `≠`.
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "<" => CmpOp::Lt,
            "<=" | "≤" => CmpOp::Le,
            "=" | "==" => CmpOp::Eq,
            "!=" | "≠" | "<>" => CmpOp::Ne,
            ">" => CmpOp::Gt,
            ">=" | "≥" => CmpOp::Ge,
            _ => return None,
        })
    }

    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }

    fn is_equality(self) -> bool {
        matches!(self, CmpOp::Eq | CmpOp::Ne)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Field(String),
    Literal(Value),
}

impl Operand {
    pub fn field(name: &str) -> Self {
        Operand::Field(name.to_string())
    }

    fn lookup<'a>(&'a self, data: &'a Map<String, Value>) -> Option<&'a Value> {
        match self {
            Operand::Field(f) => data.get(f).filter(|v| !v.is_null()),
            Operand::Literal(v) => Some(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Compare { op: CmpOp, left: Operand, right: Operand },
    /// Comparison of ISO dates or date-times.
    DateOrder { op: CmpOp, left: Operand, right: Operand },
    Present(String),
    Absent(String),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Not(Box<Expr>),
}

impl Expr {
    pub fn date_before(a: &str, b: &str) -> Self {
        Expr::DateOrder {
            op: CmpOp::Lt,
            left: Operand::field(a),
            right: Operand::field(b),
        }
    }

    /// `requires(a, b)`: `a` may only be sent together with `b`.
    pub fn requires(a: &str, b: &str) -> Self {
        Expr::Or(vec![Expr::Absent(a.to_string()), Expr::Present(b.to_string())])
    }

    /// Field names referenced anywhere in the expression.
    pub fn fields(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_fields(&mut out);
        out
    }

    fn collect_fields<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Compare { left, right, .. } | Expr::DateOrder { left, right, .. } => {
                for o in [left, right] {
                    if let Operand::Field(f) = o {
                        out.push(f);
                    }
                }
            }
            Expr::Present(f) | Expr::Absent(f) => out.push(f),
            Expr::And(es) | Expr::Or(es) => es.iter().for_each(|e| e.collect_fields(out)),
            Expr::Not(e) => e.collect_fields(out),
        }
    }

    /// Evaluate against a flat item. A missing (or null) field makes
    /// comparisons false; operands of incompatible types are an error.
    pub fn eval(&self, data: &Map<String, Value>) -> Result<bool, PredicateError> {
        match self {
            Expr::Compare { op, left, right } => {
                let (Some(l), Some(r)) = (left.lookup(data), right.lookup(data)) else {
                    return Ok(false);
                };
                compare_values(*op, l, r)
            }
            Expr::DateOrder { op, left, right } => {
                let (Some(l), Some(r)) = (left.lookup(data), right.lookup(data)) else {
                    return Ok(false);
                };
                Ok(op.holds(as_datetime(l)?.cmp(&as_datetime(r)?)))
            }
            Expr::Present(f) => Ok(data.get(f).is_some_and(|v| !v.is_null())),
            Expr::Absent(f) => Ok(data.get(f).is_none_or(Value::is_null)),
            Expr::And(es) => {
                for e in es {
                    if !e.eval(data)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Expr::Or(es) => {
                for e in es {
                    if e.eval(data)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Expr::Not(e) => Ok(!e.eval(data)?),
        }
    }

    /// Type mismatches count as "not satisfied".
    pub fn holds(&self, data: &Map<String, Value>) -> bool {
        self.eval(data).unwrap_or(false)
    }

    /// Edit `data` minimally so the expression is false. Returns whether it
    /// now is.
    pub fn violate(&self, data: &mut Map<String, Value>) -> bool {
        self.adjust(data, false)
    }

    /// Edit `data` so the expression holds, best effort. Returns whether it
    /// now does.
    pub fn satisfy(&self, data: &mut Map<String, Value>) -> bool {
        self.adjust(data, true)
    }

    fn adjust(&self, data: &mut Map<String, Value>, want: bool) -> bool {
        if self.holds(data) == want {
            return true;
        }
        match self {
            Expr::Not(e) => e.adjust(data, !want),
            Expr::And(es) | Expr::Or(es) => {
                // Every part must move when the connective needs all of them
                // (And → true, Or → false); otherwise one part is enough.
                let all = matches!(self, Expr::And(_)) == want;
                if all {
                    let mut trial = data.clone();
                    for e in es {
                        if !e.adjust(&mut trial, want) {
                            return false;
                        }
                    }
                    return self.commit(data, trial, want);
                }
                es.iter().any(|e| {
                    let mut trial = data.clone();
                    e.adjust(&mut trial, want) && self.commit(data, trial, want)
                })
            }
            Expr::Present(f) | Expr::Absent(f) => {
                let needs_value = matches!(self, Expr::Present(_)) == want;
                if needs_value {
                    // There is no typed value to invent here.
                    data.insert(f.clone(), Value::String("x".into()));
                } else {
                    data.remove(f);
                }
                self.holds(data) == want
            }
            Expr::Compare { left, right, .. } | Expr::DateOrder { left, right, .. } => {
                let date = matches!(self, Expr::DateOrder { .. });
                self.candidates(data, left, right, date)
                    .into_iter()
                    .any(|trial| self.commit(data, trial, want))
            }
        }
    }

    fn commit(&self, data: &mut Map<String, Value>, trial: Map<String, Value>, want: bool) -> bool {
        if self.holds(&trial) == want {
            *data = trial;
            true
        } else {
            false
        }
    }

    /// Swap the two fields, then move one side to the other side's value,
    /// one step above it, or one step below it.
    fn candidates(
        &self,
        data: &Map<String, Value>,
        left: &Operand,
        right: &Operand,
        date: bool,
    ) -> Vec<Map<String, Value>> {
        let mut out = Vec::new();
        let lv = left.lookup(data).cloned();
        let rv = right.lookup(data).cloned();
        if let (Operand::Field(l), Operand::Field(r), Some(a), Some(b)) = (left, right, &lv, &rv) {
            let mut t = data.clone();
            t.insert(l.clone(), b.clone());
            t.insert(r.clone(), a.clone());
            out.push(t);
        }
        for (target, other) in [(left, &rv), (right, &lv)] {
            let (Operand::Field(name), Some(other)) = (target, other) else { continue };
            for delta in [0, 1, -1] {
                if let Some(v) = shift(other, delta, date) {
                    let mut t = data.clone();
                    t.insert(name.clone(), v);
                    out.push(t);
                }
            }
        }
        out
    }
}

fn compare_values(op: CmpOp, l: &Value, r: &Value) -> Result<bool, PredicateError> {
    match (l, r) {
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().unwrap_or(f64::NAN), b.as_f64().unwrap_or(f64::NAN));
            Ok(a.partial_cmp(&b).is_some_and(|o| op.holds(o)))
        }
        (Value::String(a), Value::String(b)) => Ok(op.holds(a.cmp(b))),
        (Value::Bool(a), Value::Bool(b)) if op.is_equality() => Ok(op.holds(a.cmp(b))),
        _ => Err(PredicateError::TypeMismatch(format!(
            "cannot apply `{}` to {l} and {r}",
            op.symbol()
        ))),
    }
}

/// Parse `YYYY-MM-DD` or an RFC 3339 date-time.
pub fn parse_date(s: &str) -> Option<NaiveDateTime> {
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return d.and_hms_opt(0, 0, 0);
    }
    DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_utc())
}

fn as_datetime(v: &Value) -> Result<NaiveDateTime, PredicateError> {
    v.as_str()
        .and_then(parse_date)
        .ok_or_else(|| PredicateError::TypeMismatch(format!("{v} is not an ISO date")))
}

fn shift(v: &Value, delta: i64, date: bool) -> Option<Value> {
    if date {
        let s = v.as_str()?;
        if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            let d = d.checked_add_signed(chrono::Duration::days(delta))?;
            return Some(Value::String(d.format("%Y-%m-%d").to_string()));
        }
        let d = DateTime::parse_from_rfc3339(s).ok()?;
        let d = d.checked_add_signed(chrono::Duration::days(delta))?;
        return Some(Value::String(d.to_rfc3339()));
    }
    match v {
        Value::Number(n) if n.is_i64() => Some(Value::from(n.as_i64()? + delta)),
        Value::Number(n) => Some(Value::from(n.as_f64()? + delta as f64)),
        other if delta == 0 => Some(other.clone()),
        _ => None,
    }
}

// ---------------------------------------------------------------- text form

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Field(name) => f.write_str(name),
            Operand::Literal(v) => write!(f, "{v}"),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Compare { op, left, right } => write!(f, "({} {left} {right})", op.symbol()),
            Expr::DateOrder { op, left, right } => {
                write!(f, "(date{} {left} {right})", op.symbol())
            }
            Expr::Present(name) => write!(f, "(present {name})"),
            Expr::Absent(name) => write!(f, "(absent {name})"),
            Expr::And(es) | Expr::Or(es) => {
                f.write_str(if matches!(self, Expr::And(_)) { "(and" } else { "(or" })?;
                for e in es {
                    write!(f, " {e}")?;
                }
                f.write_str(")")
            }
            Expr::Not(e) => write!(f, "(not {e})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Atom(String),
    Str(String),
}

fn lex(text: &str) -> Result<Vec<Tok>, String> {
    let mut toks = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        match c {
            '(' => {
                toks.push(Tok::Open);
                chars.next();
            }
            ')' => {
                toks.push(Tok::Close);
                chars.next();
            }
            '"' => {
                // Reuse the JSON string grammar for escapes.
                let mut end = None;
                let mut escaped = false;
                chars.next();
                for (j, d) in chars.by_ref() {
                    if escaped {
                        escaped = false;
                    } else if d == '\\' {
                        escaped = true;
                    } else if d == '"' {
                        end = Some(j);
                        break;
                    }
                }
                let end = end.ok_or("unterminated string")?;
                let s: String =
                    serde_json::from_str(&text[i..=end]).map_err(|e| e.to_string())?;
                toks.push(Tok::Str(s));
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            _ => {
                let mut atom = String::new();
                while let Some(&(_, d)) = chars.peek() {
                    if d.is_whitespace() || d == '(' || d == ')' || d == '"' {
                        break;
                    }
                    atom.push(d);
                    chars.next();
                }
                toks.push(Tok::Atom(atom));
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Expr, String> {
        if self.next() != Some(Tok::Open) {
            return Err("expected `(`".into());
        }
        let Some(Tok::Atom(head)) = self.next() else {
            return Err("expected an operator".into());
        };
        let out = match head.as_str() {
            "present" | "absent" => {
                let name = self.field()?;
                if head == "present" {
                    Expr::Present(name)
                } else {
                    Expr::Absent(name)
                }
            }
            "and" | "or" => {
                let mut es = Vec::new();
                while self.toks.get(self.pos) == Some(&Tok::Open) {
                    es.push(self.expr()?);
                }
                if es.is_empty() {
                    return Err(format!("`{head}` needs operands"));
                }
                if head == "and" {
                    Expr::And(es)
                } else {
                    Expr::Or(es)
                }
            }
            "not" => Expr::Not(Box::new(self.expr()?)),
            other => {
                let (date, sym) = match other.strip_prefix("date") {
                    Some(sym) => (true, sym),
                    None => (false, other),
                };
                let op = CmpOp::parse(sym).ok_or_else(|| format!("unknown operator `{other}`"))?;
                let left = self.operand()?;
                let right = self.operand()?;
                if date {
                    Expr::DateOrder { op, left, right }
                } else {
                    Expr::Compare { op, left, right }
                }
            }
        };
        if self.next() != Some(Tok::Close) {
            return Err("expected `)`".into());
        }
        Ok(out)
    }

    fn field(&mut self) -> Result<String, String> {
        match self.next() {
            Some(Tok::Atom(a)) => Ok(a),
            _ => Err("expected a field name".into()),
        }
    }

    fn operand(&mut self) -> Result<Operand, String> {
        match self.next() {
            Some(Tok::Str(s)) => Ok(Operand::Literal(Value::String(s))),
            Some(Tok::Atom(a)) => Ok(atom_operand(&a)),
            _ => Err("expected an operand".into()),
        }
    }
}

fn atom_operand(a: &str) -> Operand {
    match a {
        "true" => Operand::Literal(Value::Bool(true)),
        "false" => Operand::Literal(Value::Bool(false)),
        "null" => Operand::Literal(Value::Null),
        _ => match serde_json::from_str::<Value>(a) {
            Ok(v @ Value::Number(_)) => Operand::Literal(v),
            _ => Operand::Field(a.to_string()),
        },
    }
}

impl FromStr for Expr {
    type Err = PredicateError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let syntax = |reason: String| PredicateError::Syntax {
            text: text.to_string(),
            reason,
        };
        let toks = lex(text).map_err(syntax)?;
        let mut p = Parser { toks, pos: 0 };
        let e = p.expr().map_err(syntax)?;
        if p.pos != p.toks.len() {
            return Err(syntax("trailing input".into()));
        }
        Ok(e)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}
