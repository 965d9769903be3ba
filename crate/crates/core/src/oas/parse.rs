use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde_json::{Map, Value};

use super::{
    path_template_variables, ApiSpec, DocumentFormat, FieldDef, HttpMethod, OperationDef,
    ParamLocation, ParameterDef, PrimitiveType, SchemaDef, SpecError,
};

const SCHEMA_PREFIX: &str = "#/components/schemas/";

/// Parse an OpenAPI 3.x document and normalize it.
///
/// Only document-internal references (`#/...`) are followed; any other
/// `$ref` is rejected with [`SpecError::Ref`], as is a pointer that does not
/// land on a node.
pub fn parse_spec(source: &[u8], format: DocumentFormat) -> Result<ApiSpec, SpecError> {
    let root = match format {
        DocumentFormat::Json => {
            serde_json::from_slice::<Value>(source).map_err(|e| SpecError::Parse(e.to_string()))?
        }
        DocumentFormat::Yaml => {
            let yaml: serde_yaml::Value =
                serde_yaml::from_slice(source).map_err(|e| SpecError::Parse(e.to_string()))?;
            yaml_to_json(yaml)?
        }
    };
    if !root.is_object() {
        return Err(SpecError::Parse("top level is not a mapping".into()));
    }

    let version = match root.get("openapi") {
        Some(Value::String(v)) => v.clone(),
        Some(other) => other.to_string(),
        None => {
            let found = root
                .get("swagger")
                .map(|v| v.as_str().unwrap_or("?").to_string())
                .unwrap_or_else(|| "<missing>".to_string());
            return Err(SpecError::UnsupportedVersion(found));
        }
    };
    if !version.starts_with("3.") {
        return Err(SpecError::UnsupportedVersion(version));
    }

    check_refs(&root, &root)?;

    let ctx = Ctx { root: &root };
    let title = root
        .pointer("/info/title")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let base_url = root
        .pointer("/servers/0/url")
        .and_then(Value::as_str)
        .map(str::to_string);

    let mut schemas = IndexMap::new();
    if let Some(Value::Object(map)) = root.pointer("/components/schemas") {
        for (name, value) in map {
            schemas.insert(name.clone(), ctx.named_schema(name, value)?);
        }
    }

    let mut operations = Vec::new();
    if let Some(paths) = root.get("paths") {
        let paths = paths
            .as_object()
            .ok_or_else(|| SpecError::Parse("`paths` is not a mapping".into()))?;
        for (path, item) in paths {
            let item = ctx.deref(item)?;
            let shared = item.get("parameters");
            for method in HttpMethod::ALL {
                if let Some(op) = item.get(method.as_str()) {
                    operations.push(ctx.operation(method, path, op, shared, &schemas)?);
                }
            }
        }
    }

    Ok(ApiSpec {
        title,
        base_url,
        operations,
        schemas,
    })
}

fn yaml_to_json(value: serde_yaml::Value) -> Result<Value, SpecError> {
    use serde_yaml::Value as Y;
    Ok(match value {
        Y::Null => Value::Null,
        Y::Bool(b) => Value::Bool(b),
        Y::Number(n) => {
            if let Some(i) = n.as_i64() {
                Value::from(i)
            } else if let Some(u) = n.as_u64() {
                Value::from(u)
            } else {
                n.as_f64()
                    .and_then(serde_json::Number::from_f64)
                    .map(Value::Number)
                    .unwrap_or(Value::Null)
            }
        }
        Y::String(s) => Value::String(s),
        Y::Sequence(seq) => Value::Array(seq.into_iter().map(yaml_to_json).collect::<Result<_, _>>()?),
        Y::Mapping(map) => {
            let mut out = Map::new();
            for (k, v) in map {
                let key = match k {
                    Y::String(s) => s,
                    Y::Number(n) => n.to_string(),
                    Y::Bool(b) => b.to_string(),
                    other => {
                        return Err(SpecError::Parse(format!("unsupported mapping key {other:?}")))
                    }
                };
                out.insert(key, yaml_to_json(v)?);
            }
            Value::Object(out)
        }
        Y::Tagged(tagged) => yaml_to_json(tagged.value)?,
    })
}

fn check_refs(node: &Value, root: &Value) -> Result<(), SpecError> {
    match node {
        Value::Object(map) => {
            if let Some(Value::String(r)) = map.get("$ref") {
                resolve_pointer(root, r)?;
            }
            map.values().try_for_each(|v| check_refs(v, root))
        }
        Value::Array(items) => items.iter().try_for_each(|v| check_refs(v, root)),
        _ => Ok(()),
    }
}

fn resolve_pointer<'a>(root: &'a Value, reference: &str) -> Result<&'a Value, SpecError> {
    let pointer = reference
        .strip_prefix('#')
        .ok_or_else(|| SpecError::Ref(reference.to_string()))?;
    root.pointer(pointer)
        .ok_or_else(|| SpecError::Ref(reference.to_string()))
}

fn ref_schema_name(reference: &str) -> Option<String> {
    reference
        .strip_prefix(SCHEMA_PREFIX)
        .filter(|rest| !rest.contains('/'))
        .map(|name| name.replace("~1", "/").replace("~0", "~"))
}

struct Ctx<'a> {
    root: &'a Value,
}

impl<'a> Ctx<'a> {
    /// Follow `$ref` chains until a concrete node is reached.
    fn deref(&self, mut node: &'a Value) -> Result<&'a Value, SpecError> {
        let mut hops = 0;
        while let Some(Value::String(r)) = node.get("$ref") {
            node = resolve_pointer(self.root, r)?;
            hops += 1;
            if hops > 64 {
                return Err(SpecError::Ref(r.clone()));
            }
        }
        Ok(node)
    }

    fn named_schema(&self, name: &str, value: &'a Value) -> Result<SchemaDef, SpecError> {
        let value = self.deref(value)?;
        if value.get("type").and_then(Value::as_str) == Some("array") {
            let items = value.get("items").unwrap_or(&Value::Null);
            let mut def = self.named_schema(name, items)?;
            def.is_array = true;
            return Ok(def);
        }
        Ok(SchemaDef {
            name: name.to_string(),
            fields: self.fields(value)?,
            is_array: false,
        })
    }

    /// A schema appearing in a request or response. Component references
    /// keep the component's name; inline schemas get `fallback`.
    fn usage_schema(
        &self,
        value: &'a Value,
        fallback: &str,
        components: &IndexMap<String, SchemaDef>,
    ) -> Result<SchemaDef, SpecError> {
        if let Some(Value::String(r)) = value.get("$ref") {
            if let Some(name) = ref_schema_name(r) {
                if let Some(def) = components.get(&name) {
                    return Ok(def.clone());
                }
            }
            return self.usage_schema(self.deref(value)?, fallback, components);
        }
        if value.get("type").and_then(Value::as_str) == Some("array") {
            let items = value.get("items").unwrap_or(&Value::Null);
            return Ok(self.usage_schema(items, fallback, components)?.as_array());
        }
        Ok(SchemaDef {
            name: fallback.to_string(),
            fields: self.fields(value)?,
            is_array: false,
        })
    }

    fn fields(&self, schema: &'a Value) -> Result<IndexMap<String, FieldDef>, SpecError> {
        let required: Vec<&str> = schema
            .get("required")
            .and_then(Value::as_array)
            .map(|r| r.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default();
        let mut fields = IndexMap::new();
        if let Some(Value::Object(props)) = schema.get("properties") {
            for (name, prop) in props {
                let mut field = self.field(prop)?;
                field.required = required.contains(&name.as_str());
                fields.insert(name.clone(), field);
            }
        }
        Ok(fields)
    }

    fn field(&self, prop: &'a Value) -> Result<FieldDef, SpecError> {
        let description = prop
            .get("description")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        if let Some(Value::String(r)) = prop.get("$ref") {
            let target = self.deref(prop)?;
            return Ok(FieldDef {
                ty: value_type(target),
                format: string_at(target, "format"),
                description: if description.is_empty() {
                    target
                        .get("description")
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .to_string()
                } else {
                    description
                },
                schema_ref: ref_schema_name(r),
                required: false,
            });
        }
        let ty = value_type(prop);
        let schema_ref = match ty {
            PrimitiveType::Array => prop
                .pointer("/items/$ref")
                .and_then(Value::as_str)
                .and_then(ref_schema_name),
            _ => None,
        };
        Ok(FieldDef {
            ty,
            format: string_at(prop, "format"),
            description,
            schema_ref,
            required: false,
        })
    }

    fn operation(
        &self,
        method: HttpMethod,
        path: &str,
        op: &'a Value,
        shared: Option<&'a Value>,
        components: &IndexMap<String, SchemaDef>,
    ) -> Result<OperationDef, SpecError> {
        let id = OperationDef::make_id(method, path);

        // Operation-level parameters override path-level ones with the same (name, in).
        let mut parameters: Vec<ParameterDef> = Vec::new();
        for list in [shared, op.get("parameters")].into_iter().flatten() {
            for raw in list.as_array().into_iter().flatten() {
                let param = self.parameter(raw)?;
                match parameters
                    .iter_mut()
                    .find(|p| p.name == param.name && p.location == param.location)
                {
                    Some(existing) => *existing = param,
                    None => parameters.push(param),
                }
            }
        }
        for var in path_template_variables(path) {
            let count = parameters
                .iter()
                .filter(|p| p.location == ParamLocation::Path && p.name == var)
                .count();
            if count == 0 {
                parameters.push(ParameterDef {
                    name: var,
                    location: ParamLocation::Path,
                    ty: PrimitiveType::String,
                    format: None,
                    description: String::new(),
                    required: true,
                    pointer: None,
                });
            }
        }

        let request_body_schema = match op.get("requestBody") {
            Some(body) => {
                let body = self.deref(body)?;
                match json_media_schema(body) {
                    Some(schema) => {
                        let mut def =
                            self.usage_schema(schema, &format!("{id}.requestBody"), components)?;
                        // `required` on an inline body schema already landed on the fields;
                        // a referenced component carries its own list.
                        if let Some(req) = self.deref(schema)?.get("required").and_then(Value::as_array) {
                            for name in req.iter().filter_map(Value::as_str) {
                                if let Some(f) = def.fields.get_mut(name) {
                                    f.required = true;
                                }
                            }
                        }
                        Some(def)
                    }
                    None => None,
                }
            }
            None => None,
        };

        let mut documented_responses = BTreeMap::new();
        if let Some(Value::Object(responses)) = op.get("responses") {
            for (code, resp) in responses {
                let Ok(code) = code.parse::<u16>() else { continue };
                if !(100..=599).contains(&code) {
                    continue;
                }
                let resp = self.deref(resp)?;
                let schema = match json_media_schema(resp) {
                    Some(s) => Some(self.usage_schema(s, &format!("{id}.{code}"), components)?),
                    None => None,
                };
                documented_responses.insert(code, schema);
            }
        }

        Ok(OperationDef {
            id,
            method,
            path: path.to_string(),
            summary: string_at(op, "summary").unwrap_or_default(),
            description: string_at(op, "description").unwrap_or_default(),
            parameters,
            request_body_schema,
            documented_responses,
        })
    }

    fn parameter(&self, raw: &'a Value) -> Result<ParameterDef, SpecError> {
        let raw = self.deref(raw)?;
        let name = string_at(raw, "name")
            .filter(|n| !n.is_empty())
            .ok_or_else(|| SpecError::Parse("parameter without a name".into()))?;
        // A parameter without `in` is read as a query parameter.
        let location = match raw.get("in").and_then(Value::as_str).unwrap_or("query") {
            "path" => ParamLocation::Path,
            "header" => ParamLocation::Header,
            "query" | "cookie" => ParamLocation::Query,
            other => return Err(SpecError::Parse(format!("unknown parameter location `{other}`"))),
        };
        let schema = match raw.get("schema") {
            Some(s) => self.deref(s)?,
            None => &Value::Null,
        };
        let description = string_at(raw, "description")
            .or_else(|| string_at(schema, "description"))
            .unwrap_or_default();
        let required = location == ParamLocation::Path
            || raw.get("required").and_then(Value::as_bool).unwrap_or(false);
        Ok(ParameterDef {
            name,
            location,
            ty: if schema.is_null() { PrimitiveType::String } else { value_type(schema) },
            format: string_at(schema, "format"),
            description,
            required,
            pointer: None,
        })
    }
}

fn json_media_schema(node: &Value) -> Option<&Value> {
    let content = node.get("content")?.as_object()?;
    let media = content
        .get("application/json")
        .or_else(|| content.iter().find(|(k, _)| k.ends_with("+json")).map(|(_, v)| v))
        .or_else(|| content.values().next())?;
    media.get("schema")
}

fn value_type(schema: &Value) -> PrimitiveType {
    match schema.get("type") {
        Some(Value::String(t)) => PrimitiveType::parse(t).unwrap_or(PrimitiveType::String),
        // OAS 3.1 allows a list such as ["string", "null"].
        Some(Value::Array(ts)) => ts
            .iter()
            .filter_map(Value::as_str)
            .find_map(|t| PrimitiveType::parse(t).filter(|_| t != "null"))
            .unwrap_or(PrimitiveType::String),
        _ if schema.get("properties").is_some() => PrimitiveType::Object,
        _ if schema.get("items").is_some() => PrimitiveType::Array,
        _ => PrimitiveType::String,
    }
}

fn string_at(node: &Value, key: &str) -> Option<String> {
    node.get(key).and_then(Value::as_str).map(str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn json(doc: &str) -> Result<ApiSpec, SpecError> {
        parse_spec(doc.as_bytes(), DocumentFormat::Json)
    }

    #[test]
    fn zero_paths_gives_empty_operations() {
        let spec = json(r#"{"openapi":"3.0.1","info":{"title":"empty"},"paths":{}}"#).unwrap();
        assert!(spec.operations.is_empty());
        let spec = json(r#"{"openapi":"3.1.0","info":{"title":"no paths"}}"#).unwrap();
        assert!(spec.operations.is_empty());
    }

    #[test]
    fn malformed_documents() {
        assert!(matches!(json("{not json"), Err(SpecError::Parse(_))));
        assert!(matches!(
            parse_spec(b"openapi: [unclosed", DocumentFormat::Yaml),
            Err(SpecError::Parse(_))
        ));
        assert!(matches!(json("[1,2]"), Err(SpecError::Parse(_))));
    }

    #[test]
    fn rejects_swagger_2() {
        assert_eq!(
            json(r#"{"swagger":"2.0","info":{"title":"old"},"paths":{}}"#),
            Err(SpecError::UnsupportedVersion("2.0".into()))
        );
        assert!(matches!(
            json(r#"{"openapi":"2.0","paths":{}}"#),
            Err(SpecError::UnsupportedVersion(_))
        ));
    }

    #[test]
    fn dangling_and_external_refs() {
        let dangling = r##"{"openapi":"3.0.0","paths":{"/a":{"get":{"responses":{"200":{"description":"",
            "content":{"application/json":{"schema":{"$ref":"#/components/schemas/Missing"}}}}}}}}}"##;
        assert_eq!(
            json(dangling),
            Err(SpecError::Ref("#/components/schemas/Missing".into()))
        );
        let external = r#"{"openapi":"3.0.0","paths":{},"components":{"schemas":{"A":{"$ref":"other.yaml#/A"}}}}"#;
        assert_eq!(json(external), Err(SpecError::Ref("other.yaml#/A".into())));
    }

    #[test]
    fn single_path_variable() {
        let doc = "openapi: 3.0.0\npaths:\n  /items/{id}:\n    get:\n      parameters: [{name: id, in: path, schema: {type: integer}}]\n      responses: {'200': {description: ok}}\n";
        let spec = parse_spec(doc.as_bytes(), DocumentFormat::Yaml).unwrap();
        let params = spec.operations[0].all_parameters();
        assert_eq!(params.len(), 1);
        assert_eq!(params[0].name, "id");
        assert_eq!(params[0].location, ParamLocation::Path);
        assert!(params[0].required);
        assert_eq!(spec.operations[0].id, "get-/items/{id}");
    }

    #[test]
    fn undeclared_path_variable_is_synthesized() {
        let doc = r#"{"openapi":"3.0.0","paths":{"/u/{userId}":{"delete":{"responses":{"204":{"description":""}}}}}}"#;
        let spec = json(doc).unwrap();
        let params = spec.operations[0].all_parameters();
        assert_eq!(params.len(), 1);
        assert_eq!((params[0].name.as_str(), params[0].location), ("userId", ParamLocation::Path));
    }

    #[test]
    fn path_level_parameters_are_merged() {
        let doc = r#"{"openapi":"3.0.0","paths":{"/u/{id}":{
            "parameters":[{"name":"id","in":"path","schema":{"type":"string"}},{"name":"v","in":"query"}],
            "get":{"parameters":[{"name":"id","in":"path","schema":{"type":"integer"}}],"responses":{"200":{"description":""}}}}}}"#;
        let spec = json(doc).unwrap();
        let params = &spec.operations[0].parameters;
        assert_eq!(params.len(), 2);
        assert_eq!(params[0].ty, PrimitiveType::Integer);
    }

    #[test]
    fn referenced_parameters_bodies_and_responses() {
        let doc = r##"{"openapi":"3.0.0","paths":{"/p":{"post":{
            "parameters":[{"$ref":"#/components/parameters/Limit"}],
            "requestBody":{"$ref":"#/components/requestBodies/PetBody"},
            "responses":{"201":{"$ref":"#/components/responses/Created"},"default":{"description":"x"}}}}},
          "components":{
            "parameters":{"Limit":{"name":"limit","in":"query","required":true,"schema":{"type":"integer"}}},
            "requestBodies":{"PetBody":{"content":{"application/json":{"schema":{"$ref":"#/components/schemas/Pet"}}}}},
            "responses":{"Created":{"description":"","content":{"application/json":{"schema":{"$ref":"#/components/schemas/Pet"}}}}},
            "schemas":{"Pet":{"type":"object","required":["name"],"properties":{"name":{"type":"string"},"tags":{"type":"array","items":{"$ref":"#/components/schemas/Tag"}}}},
                       "Tag":{"type":"object","properties":{"label":{"type":"string"}}}}}}"##;
        let spec = json(doc).unwrap();
        let op = &spec.operations[0];
        assert_eq!(op.parameters[0].name, "limit");
        assert!(op.parameters[0].required);
        let body = op.request_body_schema.as_ref().unwrap();
        assert_eq!(body.name, "Pet");
        assert!(body.fields["name"].required);
        assert_eq!(body.fields["tags"].schema_ref.as_deref(), Some("Tag"));
        assert_eq!(body.fields["tags"].ty, PrimitiveType::Array);
        assert_eq!(op.documented_responses.keys().copied().collect::<Vec<_>>(), [201]);
        assert_eq!(op.success_response().unwrap().1.name, "Pet");
    }

    #[test]
    fn nested_body_objects_stay_one_parameter() {
        let doc = r#"{"openapi":"3.0.0","paths":{"/o":{"post":{"requestBody":{"content":{"application/json":{"schema":{
            "type":"object","properties":{"address":{"type":"object","properties":{"city":{"type":"string"}}}}}}}},
            "responses":{"200":{"description":""}}}}}}"#;
        let spec = json(doc).unwrap();
        let params = spec.operations[0].all_parameters();
        assert_eq!(params.len(), 1);
        assert_eq!(params[0].ty, PrimitiveType::Object);
        assert_eq!(params[0].pointer.as_deref(), Some("/address"));
        assert_eq!(
            spec.operations[0].request_body_schema.as_ref().unwrap().name,
            "post-/o.requestBody"
        );
    }

    #[test]
    fn yaml_integer_response_keys() {
        let doc = "openapi: 3.0.0\npaths:\n  /a:\n    get:\n      responses:\n        200:\n          description: ok\n        404:\n          description: missing\n";
        let spec = parse_spec(doc.as_bytes(), DocumentFormat::Yaml).unwrap();
        assert_eq!(
            spec.operations[0].documented_responses.keys().copied().collect::<Vec<_>>(),
            [200, 404]
        );
    }

    #[test]
    fn array_response_marks_schema() {
        let spec = crate::fixtures::flight_booking();
        let (code, schema) = spec.operations[0].success_response().unwrap();
        assert_eq!(code, 200);
        assert_eq!(schema.name, "Flight");
        assert!(schema.is_array);
    }
}
