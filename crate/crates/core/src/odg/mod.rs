//! Operation dependency graph.
//!
//! Edges come from three sources, strongest first: exact field-name matches
//! between a producer's response and a consumer's parameters, the
//! operation-schema dictionary (OS) inferred by the language model, and a
//! one-level walk of the schema-schema dictionary (SS) from the schemas an
//! operation already depends on.

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{self, build_os_prompt, build_ss_prompt, parse_arrow_lines, parse_schema_list, LlmBackend};
use crate::oas::{is_2xx, producing_operations, ApiSpec, OperationDef, SchemaDef};
use crate::tokens::tokenize;

#[derive(Debug, Error)]
pub enum OdgError {
    #[error("malformed graph document: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Heuristic,
    OsDep,
    SsDep,
}

impl Provenance {
    /// Lower is stronger evidence.
    pub fn strength_rank(self) -> u8 {
        match self {
            Provenance::Heuristic => 0,
            Provenance::OsDep => 1,
            Provenance::SsDep => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FieldPair {
    pub producer_field: String,
    pub consumer_param: String,
}

impl FieldPair {
    pub fn new(producer_field: &str, consumer_param: &str) -> Self {
        Self {
            producer_field: producer_field.to_string(),
            consumer_param: consumer_param.to_string(),
        }
    }
}

/// `source` must run before `target`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OdgEdge {
    pub source: String,
    pub target: String,
    pub field_pairs: Vec<FieldPair>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OperationDependencyGraph {
    pub nodes: BTreeSet<String>,
    pub edges: Vec<OdgEdge>,
}

impl OperationDependencyGraph {
    pub fn new(nodes: impl IntoIterator<Item = String>) -> Self {
        Self {
            nodes: nodes.into_iter().collect(),
            edges: Vec::new(),
        }
    }

    /// Add one field pair, merging into an existing edge with the same
    /// endpoints and provenance. Repeated `(source, target, param)` triples
    /// are ignored.
    pub fn add_pair(&mut self, source: &str, target: &str, pair: FieldPair, provenance: Provenance) {
        if source == target
            || self.edges.iter().any(|e| {
                e.source == source
                    && e.target == target
                    && e.field_pairs.iter().any(|p| p.consumer_param == pair.consumer_param)
            })
        {
            return;
        }
        match self
            .edges
            .iter_mut()
            .find(|e| e.source == source && e.target == target && e.provenance == provenance)
        {
            Some(e) => e.field_pairs.push(pair),
            None => self.edges.push(OdgEdge {
                source: source.to_string(),
                target: target.to_string(),
                field_pairs: vec![pair],
                provenance,
            }),
        }
    }

    pub fn edges_into<'a>(&'a self, target: &'a str) -> impl Iterator<Item = &'a OdgEdge> + 'a {
        self.edges.iter().filter(move |e| e.target == target)
    }

    /// Sorted nodes, sorted edges, sorted field pairs.
    pub fn canonicalize(&mut self) {
        for e in &mut self.edges {
            e.field_pairs.sort();
        }
        self.edges.sort();
    }

    pub fn triples(&self) -> BTreeSet<(String, String, String)> {
        self.edges
            .iter()
            .flat_map(|e| {
                e.field_pairs
                    .iter()
                    .map(|p| (e.source.clone(), e.target.clone(), p.consumer_param.clone()))
            })
            .collect()
    }
}

/// Fig. 6 shape: operation → schema → consumer parameter → producer field.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OperationSchemaDeps {
    pub map: BTreeMap<String, IndexMap<String, IndexMap<String, String>>>,
    /// Mappings discarded for naming unknown schemas, fields or parameters.
    #[serde(skip)]
    pub dropped: usize,
}

/// Schema → schemas that must exist first.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchemaSchemaDeps {
    pub map: IndexMap<String, Vec<String>>,
    #[serde(skip)]
    pub dropped: usize,
}

impl SchemaSchemaDeps {
    pub fn get(&self, schema: &str) -> &[String] {
        self.map.get(schema).map(Vec::as_slice).unwrap_or_default()
    }
}

/// Fields of every documented 2xx response schema of a GET/POST operation.
fn produced_fields(op: &OperationDef) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::new();
    if !op.method.is_producer() {
        return out;
    }
    for (code, schema) in &op.documented_responses {
        if !is_2xx(*code) {
            continue;
        }
        for f in schema.iter().flat_map(|s| s.fields.keys()) {
            if !out.contains(&f.as_str()) {
                out.push(f);
            }
        }
    }
    out
}

/// Case-sensitive exact matches between producer response fields and
/// consumer parameter names.
pub fn gather_heuristic_edges(spec: &ApiSpec) -> Vec<OdgEdge> {
    let mut g = OperationDependencyGraph::default();
    for producer in &spec.operations {
        let fields = produced_fields(producer);
        if fields.is_empty() {
            continue;
        }
        for consumer in &spec.operations {
            for p in consumer.all_parameters() {
                if fields.contains(&p.name.as_str()) {
                    g.add_pair(
                        &producer.id,
                        &consumer.id,
                        FieldPair::new(&p.name, &p.name),
                        Provenance::Heuristic,
                    );
                }
            }
        }
    }
    g.edges
}

/// schema -> consumer parameter -> producer field
type SchemaParams = IndexMap<String, IndexMap<String, String>>;

/// One OS prompt per operation with parameters, issued in parallel.
pub fn infer_operation_schema_deps(spec: &ApiSpec, backend: &dyn LlmBackend) -> OperationSchemaDeps {
    let schemas: Vec<&SchemaDef> = spec.schemas.values().collect();
    let per_op: Vec<(String, SchemaParams, usize)> = spec
        .operations
        .par_iter()
        .filter_map(|op| {
            let params = op.all_parameters();
            if params.is_empty() {
                return None;
            }
            let req = build_os_prompt(op, &params, &schemas);
            let parsed = match llm::complete_parsed(backend, &req, parse_arrow_lines) {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("operation-schema inference for {} failed: {e}", op.id);
                    return Some((op.id.clone(), IndexMap::new(), 0));
                }
            };
            let mut entry = SchemaParams::new();
            let mut dropped = 0;
            for m in parsed.items {
                let known = params.iter().any(|p| p.name == m.param_name)
                    && spec
                        .schemas
                        .get(&m.schema_name)
                        .is_some_and(|s| s.fields.contains_key(&m.schema_field));
                if known {
                    entry
                        .entry(m.schema_name)
                        .or_default()
                        .insert(m.param_name, m.schema_field);
                } else {
                    dropped += 1;
                }
            }
            Some((op.id.clone(), entry, dropped))
        })
        .collect();
    let mut out = OperationSchemaDeps::default();
    for (op_id, entry, dropped) in per_op {
        out.dropped += dropped;
        if !entry.is_empty() {
            out.map.insert(op_id, entry);
        }
    }
    out
}

/// One SS prompt per schema; a schema never lists itself.
pub fn infer_schema_schema_deps(spec: &ApiSpec, backend: &dyn LlmBackend) -> SchemaSchemaDeps {
    let schemas: Vec<&SchemaDef> = spec.schemas.values().collect();
    let known: BTreeSet<String> = spec.schemas.keys().cloned().collect();
    let per_schema: Vec<(String, Vec<String>, usize)> = schemas
        .par_iter()
        .map(|s| {
            let req = build_ss_prompt(s, &schemas);
            match backend.complete(&req) {
                Ok(reply) => {
                    let parsed = parse_schema_list(&reply, &known);
                    let before = parsed.items.len();
                    let items: Vec<String> = parsed.items.into_iter().filter(|n| n != &s.name).collect();
                    let dropped = parsed.dropped + before - items.len();
                    (s.name.clone(), items, dropped)
                }
                Err(e) => {
                    log::warn!("schema-schema inference for {} failed: {e}", s.name);
                    (s.name.clone(), Vec::new(), 0)
                }
            }
        })
        .collect();
    let mut out = SchemaSchemaDeps::default();
    for (name, deps, dropped) in per_schema {
        out.dropped += dropped;
        out.map.insert(name, deps);
    }
    out
}

fn first_id_field(schema: &SchemaDef) -> Option<&str> {
    schema
        .fields
        .keys()
        .find(|k| tokenize(k).last().is_some_and(|t| t == "id" || t == "uuid"))
        .map(String::as_str)
}

/// Which field of `child` supplies `param`, reached through `parent.field`.
fn child_field<'a>(parent: &SchemaDef, field: &str, child: &'a SchemaDef, param: &str) -> Option<&'a str> {
    let refs_child = parent
        .fields
        .get(field)
        .and_then(|f| f.schema_ref.as_deref())
        == Some(child.name.as_str());
    if refs_child {
        if let Some(id) = first_id_field(child) {
            return Some(id);
        }
    }
    [field, param]
        .into_iter()
        .find_map(|name| child.fields.get_key_value(name).map(|(k, _)| k.as_str()))
}

fn other_producers(spec: &ApiSpec, schema: &str, consumer: &str) -> Vec<String> {
    producing_operations(spec, schema)
        .unwrap_or_default()
        .into_iter()
        .filter(|p| p != consumer)
        .collect()
}

/// Heuristic edges, then OS-resolved edges, then one SS level for the
/// parameters still uncovered. A parameter leaves the uncovered set only
/// when an edge covers it, and every producer of its schema gets an edge.
pub fn build_odg(
    spec: &ApiSpec,
    backend: &dyn LlmBackend,
) -> (OperationDependencyGraph, OperationSchemaDeps, SchemaSchemaDeps) {
    let mut g = OperationDependencyGraph::new(spec.operation_ids().map(str::to_string));
    let heuristic = gather_heuristic_edges(spec);
    for e in &heuristic {
        for p in &e.field_pairs {
            g.add_pair(&e.source, &e.target, p.clone(), Provenance::Heuristic);
        }
    }
    let os = infer_operation_schema_deps(spec, backend);
    let ss = infer_schema_schema_deps(spec, backend);

    for op in &spec.operations {
        let Some(os_op) = os.map.get(&op.id) else { continue };
        let mut uncovered: Vec<String> = op
            .all_parameters()
            .into_iter()
            .map(|p| p.name)
            .filter(|name| !g.edges_into(&op.id).any(|e| e.field_pairs.iter().any(|p| &p.consumer_param == name)))
            .collect();

        for (schema, mapping) in os_op {
            let producers = other_producers(spec, schema, &op.id);
            for (param, field) in mapping {
                if producers.is_empty() || !uncovered.contains(param) {
                    continue;
                }
                for producer in &producers {
                    g.add_pair(producer, &op.id, FieldPair::new(field, param), Provenance::OsDep);
                }
                uncovered.retain(|p| p != param);
            }
        }

        if uncovered.is_empty() {
            continue;
        }
        let mut children: Vec<&str> = Vec::new();
        for s in os_op.keys() {
            for c in ss.get(s) {
                if !children.contains(&c.as_str()) {
                    children.push(c);
                }
            }
        }
        for child_name in children {
            let Ok(child) = spec.schema(child_name) else { continue };
            let producers = other_producers(spec, child_name, &op.id);
            if producers.is_empty() {
                continue;
            }
            for (schema, mapping) in os_op {
                if !ss.get(schema).iter().any(|c| c == child_name) {
                    continue;
                }
                let Ok(parent) = spec.schema(schema) else { continue };
                for (param, field) in mapping {
                    if !uncovered.contains(param) {
                        continue;
                    }
                    let Some(pf) = child_field(parent, field, child, param) else { continue };
                    for producer in &producers {
                        g.add_pair(producer, &op.id, FieldPair::new(pf, param), Provenance::SsDep);
                    }
                    uncovered.retain(|p| p != param);
                }
            }
        }
    }
    g.canonicalize();
    (g, os, ss)
}

/// Canonical pretty JSON with sorted nodes and edges.
pub fn serialize_odg(g: &OperationDependencyGraph) -> Vec<u8> {
    let mut g = g.clone();
    g.canonicalize();
    let mut out = serde_json::to_vec_pretty(&g).expect("graph serializes");
    out.push(b'\n');
    out
}

pub fn load_odg(bytes: &[u8]) -> Result<OperationDependencyGraph, OdgError> {
    let g: OperationDependencyGraph =
        serde_json::from_slice(bytes).map_err(|e| OdgError::Format(e.to_string()))?;
    for e in &g.edges {
        if e.source == e.target || e.field_pairs.is_empty() {
            return Err(OdgError::Format(format!("invalid edge {} -> {}", e.source, e.target)));
        }
        if !g.nodes.contains(&e.source) || !g.nodes.contains(&e.target) {
            return Err(OdgError::Format(format!("edge {} -> {} names an unknown node", e.source, e.target)));
        }
    }
    Ok(g)
}
