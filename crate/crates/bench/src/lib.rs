//! Synthetic inputs shared by the benchmarks.

use restdep_core::odg::{FieldPair, OperationDependencyGraph, Provenance};
use serde_json::{json, Map, Value};

/// A layered DAG: node `i` depends on `i - 1` and `i - 7` when they exist.
pub fn layered_graph(n: usize) -> OperationDependencyGraph {
    let name = |i: usize| format!("get-/r{i:04}");
    let mut g = OperationDependencyGraph::new((0..n).map(name));
    for i in 1..n {
        g.add_pair(&name(i - 1), &name(i), FieldPair::new("id", "prevId"), Provenance::Heuristic);
        if i >= 7 {
            g.add_pair(&name(i - 7), &name(i), FieldPair::new("id", "farId"), Provenance::OsDep);
        }
    }
    g
}

/// A booking item with the given day offsets.
pub fn booking_item(departure_day: u32, arrival_day: u32) -> Map<String, Value> {
    json!({
        "departureDate": format!("2031-03-{departure_day:02}"),
        "arrivalDate": format!("2031-03-{arrival_day:02}"),
        "passengerName": "Ada",
        "passengerAge": 30,
    })
    .as_object()
    .cloned()
    .unwrap_or_default()
}
