//! Normalized OpenAPI 3.x object model.
//!
//! [`parse_spec`] turns a JSON or YAML document into an [`ApiSpec`] with all
//! internal `$ref` pointers resolved. Everything downstream (dependency
//! graph, data generation, plans, metrics) reads this model and never the raw
//! document.

mod parse;

use std::collections::BTreeMap;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use parse::parse_spec;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpecError {
    #[error("malformed document: {0}")]
    Parse(String),
    #[error("unresolvable reference `{0}`")]
    Ref(String),
    #[error("unsupported OpenAPI version `{0}` (only 3.x is accepted)")]
    UnsupportedVersion(String),
    #[error("unknown operation `{0}`")]
    UnknownOperation(String),
    #[error("unknown schema `{0}`")]
    UnknownSchema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DocumentFormat {
    Json,
    Yaml,
}

impl DocumentFormat {
    /// Guess from a file extension; anything that is not `.json` is read as YAML.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Self::Json,
            _ => Self::Yaml,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HttpMethod {
    Get,
    Put,
    Post,
    Delete,
    Patch,
    Head,
    Options,
    Trace,
}

impl HttpMethod {
    pub const ALL: [HttpMethod; 8] = [
        HttpMethod::Get,
        HttpMethod::Put,
        HttpMethod::Post,
        HttpMethod::Delete,
        HttpMethod::Patch,
        HttpMethod::Head,
        HttpMethod::Options,
        HttpMethod::Trace,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HttpMethod::Get => "get",
            HttpMethod::Put => "put",
            HttpMethod::Post => "post",
            HttpMethod::Delete => "delete",
            HttpMethod::Patch => "patch",
            HttpMethod::Head => "head",
            HttpMethod::Options => "options",
            HttpMethod::Trace => "trace",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str().eq_ignore_ascii_case(s))
    }

    /// Methods allowed to act as producers of data for other operations.
    pub fn is_producer(self) -> bool {
        matches!(self, HttpMethod::Get | HttpMethod::Post)
    }
}

impl fmt::Display for HttpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_ascii_uppercase())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamLocation {
    Path,
    Query,
    Header,
    BodyField,
}

impl ParamLocation {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamLocation::Path => "path",
            ParamLocation::Query => "query",
            ParamLocation::Header => "header",
            ParamLocation::BodyField => "body-field",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveType {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
}

impl PrimitiveType {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "string" => Self::String,
            "integer" => Self::Integer,
            "number" => Self::Number,
            "boolean" => Self::Boolean,
            "array" => Self::Array,
            "object" => Self::Object,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::String => "string",
            Self::Integer => "integer",
            Self::Number => "number",
            Self::Boolean => "boolean",
            Self::Array => "array",
            Self::Object => "object",
        }
    }

    /// Whether `value` is an instance of this type. `null` never is.
    pub fn admits(self, value: &serde_json::Value) -> bool {
        use serde_json::Value;
        match (self, value) {
            (Self::String, Value::String(_)) => true,
            (Self::Integer, Value::Number(n)) => n.is_i64() || n.is_u64(),
            (Self::Number, Value::Number(_)) => true,
            (Self::Boolean, Value::Bool(_)) => true,
            (Self::Array, Value::Array(_)) => true,
            (Self::Object, Value::Object(_)) => true,
            _ => false,
        }
    }
}

impl fmt::Display for PrimitiveType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterDef {
    pub name: String,
    pub location: ParamLocation,
    #[serde(rename = "type")]
    pub ty: PrimitiveType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    #[serde(default)]
    pub description: String,
    pub required: bool,
    /// JSON pointer inside the request body; only set for body fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointer: Option<String>,
}

impl ParameterDef {
    pub fn is_date(&self) -> bool {
        matches!(self.format.as_deref(), Some("date") | Some("date-time"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDef {
    #[serde(rename = "type")]
    pub ty: PrimitiveType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    #[serde(default)]
    pub description: String,
    /// Component schema this field points at (directly or as array items).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_ref: Option<String>,
    #[serde(default)]
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDef {
    pub name: String,
    pub fields: IndexMap<String, FieldDef>,
    #[serde(default)]
    pub is_array: bool,
}

impl SchemaDef {
    pub fn empty(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            fields: IndexMap::new(),
            is_array: false,
        }
    }

    pub fn as_array(mut self) -> Self {
        self.is_array = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationDef {
    pub id: String,
    pub method: HttpMethod,
    pub path: String,
    #[serde(default)]
    pub summary: String,
    #[serde(default)]
    pub description: String,
    /// Declared path, query and header parameters. Body fields are derived
    /// from `request_body_schema` by [`OperationDef::all_parameters`].
    pub parameters: Vec<ParameterDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_body_schema: Option<SchemaDef>,
    pub documented_responses: BTreeMap<u16, Option<SchemaDef>>,
}

impl OperationDef {
    pub fn make_id(method: HttpMethod, path: &str) -> String {
        format!("{}-{}", method.as_str(), path)
    }

    /// Declared parameters followed by the request body flattened one level.
    pub fn all_parameters(&self) -> Vec<ParameterDef> {
        let mut params = self.parameters.clone();
        if let Some(body) = &self.request_body_schema {
            if body.is_array {
                params.push(ParameterDef {
                    name: "body".to_string(),
                    location: ParamLocation::BodyField,
                    ty: PrimitiveType::Array,
                    format: None,
                    description: String::new(),
                    required: true,
                    pointer: Some(String::new()),
                });
            } else {
                params.extend(body.fields.iter().map(|(name, field)| ParameterDef {
                    name: name.clone(),
                    location: ParamLocation::BodyField,
                    ty: field.ty,
                    format: field.format.clone(),
                    description: field.description.clone(),
                    required: field.required,
                    pointer: Some(format!("/{}", escape_pointer_token(name))),
                }));
            }
        }
        params
    }

    /// The documented success response with a schema, lowest code first.
    pub fn success_response(&self) -> Option<(u16, &SchemaDef)> {
        self.documented_responses
            .iter()
            .filter(|(code, _)| is_2xx(**code))
            .find_map(|(code, schema)| schema.as_ref().map(|s| (*code, s)))
    }

    pub fn documents(&self, code: u16) -> bool {
        self.documented_responses.contains_key(&code)
    }

    pub fn documented_in_range(&self, range: StatusRange) -> Vec<u16> {
        self.documented_responses
            .keys()
            .copied()
            .filter(|c| range.contains(*c))
            .collect()
    }

    /// Names of the `{var}` segments in the path template, in order.
    pub fn path_variables(&self) -> Vec<String> {
        path_template_variables(&self.path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StatusRange {
    #[serde(rename = "2xx")]
    Success,
    #[serde(rename = "4xx")]
    ClientError,
}

impl StatusRange {
    pub fn contains(self, code: u16) -> bool {
        match self {
            StatusRange::Success => is_2xx(code),
            StatusRange::ClientError => is_4xx(code),
        }
    }

    pub fn of(code: u16) -> Option<Self> {
        if is_2xx(code) {
            Some(Self::Success)
        } else if is_4xx(code) {
            Some(Self::ClientError)
        } else {
            None
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StatusRange::Success => "2xx",
            StatusRange::ClientError => "4xx",
        }
    }
}

pub fn is_2xx(code: u16) -> bool {
    (200..300).contains(&code)
}

pub fn is_4xx(code: u16) -> bool {
    (400..500).contains(&code)
}

pub fn is_5xx(code: u16) -> bool {
    (500..600).contains(&code)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiSpec {
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    pub operations: Vec<OperationDef>,
    pub schemas: IndexMap<String, SchemaDef>,
}

impl ApiSpec {
    pub fn operation(&self, op_id: &str) -> Result<&OperationDef, SpecError> {
        self.operations
            .iter()
            .find(|op| op.id == op_id)
            .ok_or_else(|| SpecError::UnknownOperation(op_id.to_string()))
    }

    pub fn schema(&self, name: &str) -> Result<&SchemaDef, SpecError> {
        self.schemas
            .get(name)
            .ok_or_else(|| SpecError::UnknownSchema(name.to_string()))
    }

    pub fn operation_ids(&self) -> impl Iterator<Item = &str> {
        self.operations.iter().map(|op| op.id.as_str())
    }

    /// Pretty-printed normalized form; [`ApiSpec::from_normalized_json`] reads it back.
    pub fn to_normalized_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ApiSpec serializes")
    }

    pub fn from_normalized_json(text: &str) -> Result<Self, SpecError> {
        serde_json::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))
    }

    /// SHA-256 of the normalized JSON form, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_normalized_json().as_bytes()))
    }
}

/// Path, query and header parameters plus the request body flattened one level.
pub fn get_parameters(spec: &ApiSpec, op_id: &str) -> Result<Vec<ParameterDef>, SpecError> {
    Ok(spec.operation(op_id)?.all_parameters())
}

/// GET/POST operations whose documented 2xx response is `schema_name` or an
/// array of it, in spec order.
pub fn producing_operations(spec: &ApiSpec, schema_name: &str) -> Result<Vec<String>, SpecError> {
    spec.schema(schema_name)?;
    Ok(spec
        .operations
        .iter()
        .filter(|op| op.method.is_producer())
        .filter(|op| {
            op.documented_responses
                .iter()
                .any(|(code, s)| is_2xx(*code) && s.as_ref().is_some_and(|s| s.name == schema_name))
        })
        .map(|op| op.id.clone())
        .collect())
}

pub(crate) fn path_template_variables(path: &str) -> Vec<String> {
    let mut vars = Vec::new();
    let mut rest = path;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else { break };
        let name = &rest[start + 1..start + len];
        if !name.is_empty() {
            vars.push(name.to_string());
        }
        rest = &rest[start + len + 1..];
    }
    vars
}

fn escape_pointer_token(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}
