//! Prompt templates.
//!
//! Each template opens with a fixed first sentence so a reply can be routed
//! back to its template from the text alone ([`detect_template`]).

use std::fmt::Write as _;

use serde_json::{json, Value};

use super::{PromptRequest, TemplateId};
use crate::datagen::DatasetMode;
use crate::oas::{OperationDef, ParameterDef, PrimitiveType, SchemaDef};

pub(crate) const OS_HEAD: &str = "Given the operation and its parameters, identify all prerequisite schemas for retrieving information related to the operation's parameters.";
pub(crate) const SS_HEAD: &str = "Given the schema and its properties in the OpenAPI specification of an API application, your task is to identify the prerequisite schemas that need to be created before establishing the mentioned schema.";
pub(crate) const DATASET_HEAD: &str = "Given the information about the operation, generate a dataset containing 10 data items to be used to test the operation.";
pub(crate) const CONSTRAINTS_HEAD: &str = "Given the operation and its parameters, identify the inter-parameter dependencies and the real-world value constraints of the parameters.";

pub(crate) const OPERATION_BLOCK: &str = "Below is the operation and its parameters:";
pub(crate) const SCHEMA_BLOCK: &str = "Below is the schema and its properties";
pub(crate) const CATALOG_BLOCK: &str = "Below is the list of all schemas and their properties:";
pub(crate) const OPERATION_INFO: &str = "Operation information: ";
pub(crate) const REFERENCED_SCHEMA: &str = "Referenced schema: ";

pub(crate) const VALID_INSTRUCTION: &str =
    "Generate valid data items that satisfy every constraint and are expected to succeed with a 2xx status code.";
pub(crate) const INVALID_INSTRUCTION: &str =
    "Generate invalid data items that are expected to be rejected with a 4xx status code.";

/// Number of items every dataset prompt asks for.
pub const DATASET_SIZE: usize = 10;

pub fn detect_template(text: &str) -> Option<TemplateId> {
    let first = text.lines().next().unwrap_or_default();
    [
        (OS_HEAD, TemplateId::OsDep),
        (SS_HEAD, TemplateId::SsDep),
        (DATASET_HEAD, TemplateId::Dataset),
        (CONSTRAINTS_HEAD, TemplateId::Constraints),
    ]
    .into_iter()
    .find_map(|(head, id)| first.starts_with(head).then_some(id))
}

pub(crate) fn format_reminder(template: TemplateId) -> &'static str {
    match template {
        TemplateId::OsDep => "Reply only with lines of the form `<parameter> -> <Schema>.<field>`.",
        TemplateId::SsDep => "Reply only with schema names, one per line.",
        TemplateId::Dataset => "Reply only with one JSON object per line.",
        TemplateId::Constraints => "Reply only with constraint lines such as `a < b` or `requires(a, b)`.",
    }
}

/// Operation-to-schema dependency prompt.
pub fn build_os_prompt(op: &OperationDef, params: &[ParameterDef], schemas: &[&SchemaDef]) -> PromptRequest {
    let mut text = String::new();
    let _ = writeln!(text, "{OS_HEAD}\n\n{OPERATION_BLOCK}\n{}:", op.id);
    for p in params {
        let _ = writeln!(text, "  {}: {}", p.name, p.ty);
    }
    text.push('\n');
    render_catalog(&mut text, schemas);
    text.push_str(
        "\nPlease format the prerequisite schemas in the following structure:\n\
         <parameter of the operation> -> <Schema>.<field>\n\
         Return one mapping per line. No explanation needed.",
    );
    PromptRequest::new(TemplateId::OsDep, text)
}

/// Schema-to-schema prerequisite prompt.
pub fn build_ss_prompt(schema: &SchemaDef, schemas: &[&SchemaDef]) -> PromptRequest {
    let mut text = String::new();
    let _ = writeln!(text, "{SS_HEAD}\n\n{SCHEMA_BLOCK}");
    render_schema(&mut text, schema, 0);
    text.push('\n');
    render_catalog(&mut text, schemas);
    text.push_str("\nReturn in separated lines. No explanation needed.");
    PromptRequest::new(TemplateId::SsDep, text)
}

/// Dataset prompt. `scenario_hints` are appended to the mode sentence, one
/// `- ` line each.
pub fn build_dataset_prompt(
    op: &OperationDef,
    ref_schemas: &[&SchemaDef],
    mode: DatasetMode,
    scenario_hints: &[String],
) -> PromptRequest {
    let mut instruction = match mode {
        DatasetMode::Valid => VALID_INSTRUCTION.to_string(),
        DatasetMode::Invalid => INVALID_INSTRUCTION.to_string(),
    };
    for hint in scenario_hints {
        instruction.push_str("\n- ");
        instruction.push_str(hint);
    }
    let endpoint = endpoint_information(op);
    let schemas: Vec<Value> = ref_schemas.iter().map(|s| schema_json(s)).collect();
    let text = format!(
        "{DATASET_HEAD}\n{instruction}\n\n{OPERATION_INFO}{endpoint}\n{REFERENCED_SCHEMA}{}\n\n\
         Your dataset represents each data item in the JSONL format, line by line. \
         Each line is an object {{\"data\": {{...}}, \"expected_code\": <status>}}.",
        Value::Array(schemas)
    );
    PromptRequest::new(TemplateId::Dataset, text)
}

/// Inter-parameter constraint detection prompt.
pub fn build_constraint_prompt(op: &OperationDef, params: &[ParameterDef]) -> PromptRequest {
    let mut text = String::new();
    let _ = writeln!(text, "{CONSTRAINTS_HEAD}\n\n{OPERATION_BLOCK}\n{}:", op.id);
    for p in params {
        let mut attrs = vec![p.location.as_str().to_string(), p.ty.to_string()];
        if let Some(f) = &p.format {
            attrs.push(format!("format {f}"));
        }
        if p.required {
            attrs.push("required".into());
        }
        let _ = writeln!(text, "  {} ({}): {}", p.name, attrs.join(", "), p.description.trim());
    }
    text.push_str(
        "\nWrite each constraint on its own line as `<field> <relop> <field or literal>` \
         with relop one of <, <=, =, !=, >, >=, or as `requires(<field>, <field>)` when the \
         first field may only be sent together with the second. \
         Return nothing if there are no constraints. No explanation needed.",
    );
    PromptRequest::new(TemplateId::Constraints, text)
}

fn render_catalog(text: &mut String, schemas: &[&SchemaDef]) {
    let _ = writeln!(text, "{CATALOG_BLOCK}\nschemas:");
    for s in schemas {
        render_schema(text, s, 2);
    }
}

fn render_schema(text: &mut String, schema: &SchemaDef, indent: usize) {
    let pad = " ".repeat(indent);
    let _ = writeln!(text, "{pad}{}:", schema.name);
    for (name, field) in &schema.fields {
        match (&field.schema_ref, field.ty) {
            (Some(target), PrimitiveType::Array) => {
                let _ = writeln!(
                    text,
                    "{pad}  {name}:\n{pad}    type: array\n{pad}    items:\n{pad}      $ref: '#/components/schemas/{target}'"
                );
            }
            (Some(target), _) => {
                let _ = writeln!(text, "{pad}  {name}:\n{pad}    $ref: '#/components/schemas/{target}'");
            }
            (None, ty) => {
                let _ = writeln!(text, "{pad}  {name}: {ty}");
            }
        }
    }
}

fn endpoint_information(op: &OperationDef) -> Value {
    let params: Vec<Value> = op
        .all_parameters()
        .iter()
        .map(|p| {
            let mut v = json!({
                "name": p.name,
                "in": p.location.as_str(),
                "type": p.ty.as_str(),
                "required": p.required,
            });
            if let Some(f) = &p.format {
                v["format"] = json!(f);
            }
            if !p.description.is_empty() {
                v["description"] = json!(p.description);
            }
            v
        })
        .collect();
    let responses: Vec<u16> = op.documented_responses.keys().copied().collect();
    json!({
        "operation": op.id,
        "summary": op.summary,
        "parameters": params,
        "responses": responses,
    })
}

fn schema_json(schema: &SchemaDef) -> Value {
    let fields: serde_json::Map<String, Value> = schema
        .fields
        .iter()
        .map(|(name, f)| {
            let mut v = json!({"type": f.ty.as_str()});
            if let Some(fmt) = &f.format {
                v["format"] = json!(fmt);
            }
            if let Some(r) = &f.schema_ref {
                v["$ref"] = json!(r);
            }
            (name.clone(), v)
        })
        .collect();
    json!({"name": schema.name, "properties": fields})
}
