//! Single-field edits that break an item. Shared by mutation-based
//! invalid data and the mock backend's invalid items.

use serde_json::{Map, Value};

use crate::oas::{ParamLocation, ParameterDef, PrimitiveType};

/// Required fields that can be removed without breaking the URL.
fn droppable<'a>(params: &'a [ParameterDef], data: &Map<String, Value>) -> Vec<&'a ParameterDef> {
    params
        .iter()
        .filter(|p| p.required && p.location != ParamLocation::Path)
        .filter(|p| data.get(&p.name).is_some_and(|v| !v.is_null()))
        .collect()
}

pub(crate) fn drop_required(params: &[ParameterDef], data: &mut Map<String, Value>, pick: usize) -> bool {
    let c = droppable(params, data);
    if c.is_empty() {
        return false;
    }
    data.remove(&c[pick % c.len()].name);
    true
}

pub(crate) fn null_required(params: &[ParameterDef], data: &mut Map<String, Value>, pick: usize) -> bool {
    let c = droppable(params, data);
    if c.is_empty() {
        return false;
    }
    data.insert(c[pick % c.len()].name.clone(), Value::Null);
    true
}

/// Replace one field with a value of another JSON type. Body fields come
/// first; URL parameters only when the new text cannot be read back as the
/// declared type.
pub(crate) fn retype(params: &[ParameterDef], data: &mut Map<String, Value>, pick: usize) -> bool {
    let mut body = Vec::new();
    let mut url = Vec::new();
    for p in params {
        let Some(v) = data.get(&p.name).filter(|v| !v.is_null()) else { continue };
        if p.location == ParamLocation::BodyField {
            if let Some(w) = retyped_body_value(p, v) {
                body.push((p.name.clone(), w));
            }
        } else if let Some(w) = retyped_url_value(p) {
            url.push((p.name.clone(), w));
        }
    }
    let c = if body.is_empty() { url } else { body };
    if c.is_empty() {
        return false;
    }
    let (name, value) = c[pick % c.len()].clone();
    data.insert(name, value);
    true
}

fn retyped_body_value(p: &ParameterDef, v: &Value) -> Option<Value> {
    Some(match p.ty {
        // 25 → "25"
        PrimitiveType::Integer | PrimitiveType::Number => Value::String(v.to_string()),
        PrimitiveType::String => {
            let digits: String = v.as_str()?.chars().filter(char::is_ascii_digit).collect();
            Value::from(digits.parse::<u64>().unwrap_or(12345))
        }
        PrimitiveType::Boolean => Value::String(v.to_string()),
        PrimitiveType::Array | PrimitiveType::Object => Value::String("x".into()),
    })
}

fn retyped_url_value(p: &ParameterDef) -> Option<Value> {
    match p.ty {
        PrimitiveType::Integer | PrimitiveType::Number => Some(Value::String("abc".into())),
        PrimitiveType::Boolean => Some(Value::String("maybe".into())),
        _ => None,
    }
}
