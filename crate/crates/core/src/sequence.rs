//! Per-operation execution orders derived from the dependency graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oas::ApiSpec;
use crate::odg::{OdgEdge, OperationDependencyGraph};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("dependency cycle among {}", nodes.iter().cloned().collect::<Vec<_>>().join(", "))]
pub struct CycleError {
    pub nodes: BTreeSet<String>,
}

/// Value flow from one step's response into a later step's parameter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Binding {
    pub from_step: usize,
    /// Dotted path into the producer's response body, e.g. `[0].id`.
    pub path: String,
    pub to_step: usize,
    pub param: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationSequence {
    pub target: String,
    pub steps: Vec<String>,
    pub bindings: Vec<Binding>,
}

/// How array-valued producer responses are indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementChoice {
    /// `[0]`
    #[default]
    First,
    /// `[?]`, resolved by the runner from the run seed.
    Random,
}

impl ElementChoice {
    fn prefix(self) -> &'static str {
        match self {
            ElementChoice::First => "[0]",
            ElementChoice::Random => "[?]",
        }
    }
}

fn ancestors(g: &OperationDependencyGraph, target: &str) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([target.to_string()]);
    while let Some(n) = queue.pop_front() {
        for e in g.edges_into(&n) {
            if e.source != target && seen.insert(e.source.clone()) {
                queue.push_back(e.source.clone());
            }
        }
    }
    seen
}

/// Kahn's algorithm restricted to `nodes`; ready nodes leave in
/// lexicographic order.
fn topo_order(g: &OperationDependencyGraph, nodes: &BTreeSet<String>) -> Result<Vec<String>, CycleError> {
    let mut indegree: BTreeMap<&str, usize> = nodes.iter().map(|n| (n.as_str(), 0)).collect();
    let mut succ: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for e in &g.edges {
        if nodes.contains(&e.source) && nodes.contains(&e.target) && succ.entry(&e.source).or_default().insert(&e.target) {
            *indegree.get_mut(e.target.as_str()).expect("node") += 1;
        }
    }
    let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(n) = ready.pop_first() {
        order.push(n.to_string());
        for m in succ.get(n).into_iter().flatten() {
            let d = indegree.get_mut(m).expect("node");
            *d -= 1;
            if *d == 0 {
                ready.insert(m);
            }
        }
    }
    if order.len() == nodes.len() {
        Ok(order)
    } else {
        let placed: BTreeSet<&String> = order.iter().collect();
        Err(CycleError {
            nodes: nodes.iter().filter(|n| !placed.contains(n)).cloned().collect(),
        })
    }
}

fn extraction_path(spec: &ApiSpec, producer: &str, field: &str, choice: ElementChoice) -> Option<String> {
    let (_, schema) = spec.operation(producer).ok()?.success_response()?;
    if !schema.fields.contains_key(field) {
        return None;
    }
    Some(if schema.is_array {
        format!("{}.{field}", choice.prefix())
    } else {
        field.to_string()
    })
}

pub fn generate_sequences(
    g: &OperationDependencyGraph,
    spec: &ApiSpec,
) -> Result<BTreeMap<String, OperationSequence>, CycleError> {
    generate_sequences_with(g, spec, ElementChoice::First)
}

/// One sequence per operation: its ancestors plus itself in topological
/// order, with one binding per consumed parameter. Competing producers are
/// ranked heuristic, then os_dep, then ss_dep, then by operation id.
pub fn generate_sequences_with(
    g: &OperationDependencyGraph,
    spec: &ApiSpec,
    choice: ElementChoice,
) -> Result<BTreeMap<String, OperationSequence>, CycleError> {
    let mut out = BTreeMap::new();
    for target in spec.operation_ids() {
        let mut members = ancestors(g, target);
        members.insert(target.to_string());
        let mut steps = topo_order(g, &members)?;
        // Ties can put independent ancestors after the target; the target
        // still has to come last.
        steps.retain(|s| s != target);
        steps.push(target.to_string());
        let index: BTreeMap<&str, usize> = steps.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

        let mut bindings = Vec::new();
        for (to_step, consumer) in steps.iter().enumerate() {
            let mut offers: BTreeMap<&str, Vec<(u8, &str, &str)>> = BTreeMap::new();
            for e in g.edges_into(consumer) {
                let Some(&from) = index.get(e.source.as_str()) else { continue };
                if from >= to_step {
                    continue;
                }
                for p in &e.field_pairs {
                    offers.entry(&p.consumer_param).or_default().push((
                        e.provenance.strength_rank(),
                        &e.source,
                        &p.producer_field,
                    ));
                }
            }
            for (param, mut candidates) in offers {
                candidates.sort();
                let found = candidates.iter().find_map(|(_, source, field)| {
                    extraction_path(spec, source, field, choice).map(|path| (index[source], path))
                });
                if let Some((from_step, path)) = found {
                    bindings.push(Binding {
                        from_step,
                        path,
                        to_step,
                        param: param.to_string(),
                    });
                }
            }
        }
        out.insert(
            target.to_string(),
            OperationSequence {
                target: target.to_string(),
                steps,
                bindings,
            },
        );
    }
    Ok(out)
}

/// Index list of one cycle, if any. Deterministic: nodes and edges are
/// visited in canonical order.
fn find_cycle(g: &OperationDependencyGraph) -> Option<Vec<usize>> {
    let mut order: Vec<usize> = (0..g.edges.len()).collect();
    order.sort_by(|a, b| g.edges[*a].cmp(&g.edges[*b]));
    let mut out_edges: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for i in order {
        out_edges.entry(&g.edges[i].source).or_default().push(i);
    }
    let nodes: BTreeSet<&str> = g
        .nodes
        .iter()
        .map(String::as_str)
        .chain(g.edges.iter().flat_map(|e| [e.source.as_str(), e.target.as_str()]))
        .collect();
    // 0 = unvisited, 1 = on stack, 2 = done.
    let mut state: BTreeMap<&str, u8> = BTreeMap::new();
    for start in nodes {
        if state.get(start).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut path: Vec<usize> = Vec::new();
        let mut stack: Vec<(&str, usize)> = vec![(start, 0)];
        state.insert(start, 1);
        while let Some((node, next)) = stack.pop() {
            let edges = out_edges.get(node).map(Vec::as_slice).unwrap_or_default();
            if next < edges.len() {
                stack.push((node, next + 1));
                let e = edges[next];
                let to = g.edges[e].target.as_str();
                match state.get(to).copied().unwrap_or(0) {
                    0 => {
                        state.insert(to, 1);
                        path.push(e);
                        stack.push((to, 0));
                    }
                    1 => {
                        let at = path.iter().position(|&p| g.edges[p].source == to).unwrap_or(path.len());
                        let mut cycle = path[at..].to_vec();
                        cycle.push(e);
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                state.insert(node, 2);
                path.pop();
            }
        }
    }
    None
}

/// Remove edges until the graph is acyclic. From each cycle found, the edge
/// with the weakest provenance goes first (ss_dep, then os_dep, then
/// heuristic); ties drop the greatest edge in canonical order.
pub fn break_cycles(g: &OperationDependencyGraph) -> (OperationDependencyGraph, Vec<OdgEdge>) {
    let mut g = g.clone();
    let mut removed = Vec::new();
    while let Some(cycle) = find_cycle(&g) {
        let victim = *cycle
            .iter()
            .max_by(|a, b| {
                let (ea, eb) = (&g.edges[**a], &g.edges[**b]);
                ea.provenance
                    .strength_rank()
                    .cmp(&eb.provenance.strength_rank())
                    .then_with(|| ea.cmp(eb))
            })
            .expect("cycle has edges");
        removed.push(g.edges.remove(victim));
    }
    (g, removed)
}

pub fn is_acyclic(g: &OperationDependencyGraph) -> bool {
    find_cycle(g).is_none()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::llm::MockBackend;
    use crate::odg::{build_odg, FieldPair, Provenance};

    fn edge(s: &str, t: &str, p: Provenance) -> OdgEdge {
        OdgEdge {
            source: s.into(),
            target: t.into(),
            field_pairs: vec![FieldPair::new("id", &format!("{s}Id"))],
            provenance: p,
        }
    }

    fn graph(nodes: &[&str], edges: Vec<OdgEdge>) -> OperationDependencyGraph {
        OperationDependencyGraph {
            nodes: nodes.iter().map(|n| n.to_string()).collect(),
            edges,
        }
    }

    #[test]
    fn fig11_booking_sequence() {
        let spec = fixtures::flight_booking();
        let (g, _, _) = build_odg(&spec, &MockBackend::new());
        let seqs = generate_sequences(&g, &spec).unwrap();
        let booking = &seqs["post-/booking"];
        assert_eq!(booking.steps, ["get-/flights", "post-/booking"]);
        assert_eq!(
            booking.bindings,
            [Binding {
                from_step: 0,
                path: "[0].id".into(),
                to_step: 1,
                param: "flightId".into()
            }]
        );
        let flights = &seqs["get-/flights"];
        assert_eq!(flights.steps, ["get-/flights"]);
        assert!(flights.bindings.is_empty());
    }

    #[test]
    fn random_element_paths() {
        let spec = fixtures::flight_booking();
        let (g, _, _) = build_odg(&spec, &MockBackend::new());
        let seqs = generate_sequences_with(&g, &spec, ElementChoice::Random).unwrap();
        assert_eq!(seqs["post-/booking"].bindings[0].path, "[?].id");
    }

    #[test]
    fn chain_orders_every_step() {
        let g = graph(
            &["A", "B", "C"],
            vec![edge("A", "B", Provenance::OsDep), edge("B", "C", Provenance::OsDep)],
        );
        let order = topo_order(&g, &g.nodes).unwrap();
        assert_eq!(order, ["A", "B", "C"]);
        // Brute force: the only permutation respecting both edges.
        let perms = [["A", "B", "C"], ["A", "C", "B"], ["B", "A", "C"], ["B", "C", "A"], ["C", "A", "B"], ["C", "B", "A"]];
        let ok: Vec<_> = perms
            .iter()
            .filter(|p| {
                g.edges.iter().all(|e| {
                    p.iter().position(|n| *n == e.source) < p.iter().position(|n| *n == e.target)
                })
            })
            .collect();
        assert_eq!(ok, [&["A", "B", "C"]]);
    }

    #[test]
    fn cycles_are_reported() {
        let g = graph(&["A", "B"], vec![edge("A", "B", Provenance::OsDep), edge("B", "A", Provenance::OsDep)]);
        let err = topo_order(&g, &g.nodes).unwrap_err();
        assert_eq!(err.nodes.len(), 2);
    }

    #[test]
    fn break_cycles_is_identity_on_dags() {
        let g = graph(&["A", "B"], vec![edge("A", "B", Provenance::SsDep)]);
        let (h, removed) = break_cycles(&g);
        assert_eq!(h, g);
        assert!(removed.is_empty());
    }

    #[test]
    fn two_cycle_drops_ss_dep() {
        for (a, b) in [(Provenance::SsDep, Provenance::Heuristic), (Provenance::Heuristic, Provenance::SsDep)] {
            let g = graph(&["A", "B"], vec![edge("A", "B", a), edge("B", "A", b)]);
            let (h, removed) = break_cycles(&g);
            assert_eq!(removed.len(), 1);
            assert_eq!(removed[0].provenance, Provenance::SsDep);
            assert!(is_acyclic(&h));
        }
    }

    #[test]
    fn three_cycle_loses_one_edge() {
        let g = graph(
            &["A", "B", "C"],
            vec![edge("A", "B", Provenance::OsDep), edge("B", "C", Provenance::OsDep), edge("C", "A", Provenance::OsDep)],
        );
        let (h, removed) = break_cycles(&g);
        assert_eq!(removed.len(), 1);
        assert_eq!(h.edges.len(), 2);
        assert!(is_acyclic(&h));
    }

    #[test]
    fn binding_prefers_strongest_provenance_then_name() {
        let doc = r##"{"openapi":"3.0.0","info":{"title":"t"},"paths":{
            "/flights":{"get":{"responses":{"200":{"description":"","content":{"application/json":{"schema":{"type":"array","items":{"$ref":"#/components/schemas/Flight"}}}}}}}},
            "/flights/latest":{"get":{"responses":{"200":{"description":"","content":{"application/json":{"schema":{"$ref":"#/components/schemas/Flight"}}}}}}},
            "/booking":{"post":{"parameters":[{"name":"flightId","in":"query","schema":{"type":"integer"}}],"responses":{"200":{"description":""}}}}},
            "components":{"schemas":{"Flight":{"type":"object","properties":{"id":{"type":"integer"}}}}}}"##;
        let spec = crate::oas::parse_spec(doc.as_bytes(), crate::oas::DocumentFormat::Json).unwrap();
        let pair = || FieldPair::new("id", "flightId");
        let mut g = OperationDependencyGraph::new(spec.operation_ids().map(str::to_string));
        g.edges.push(OdgEdge { source: "get-/flights".into(), target: "post-/booking".into(), field_pairs: vec![pair()], provenance: Provenance::SsDep });
        g.edges.push(OdgEdge { source: "get-/flights/latest".into(), target: "post-/booking".into(), field_pairs: vec![pair()], provenance: Provenance::Heuristic });
        let seq = &generate_sequences(&g, &spec).unwrap()["post-/booking"];
        assert_eq!(seq.steps, ["get-/flights", "get-/flights/latest", "post-/booking"]);
        assert_eq!(seq.bindings.len(), 1);
        assert_eq!((seq.bindings[0].from_step, seq.bindings[0].path.as_str()), (1, "id"));

        g.edges[0].provenance = Provenance::Heuristic;
        let seq = &generate_sequences(&g, &spec).unwrap()["post-/booking"];
        assert_eq!((seq.bindings[0].from_step, seq.bindings[0].path.as_str()), (0, "[0].id"));
    }
}
