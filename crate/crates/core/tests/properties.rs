use proptest::prelude::*;
use restdep_core::odg::{FieldPair, OdgEdge, OperationDependencyGraph, Provenance};
use restdep_core::sequence::{break_cycles, generate_sequences, is_acyclic};
use restdep_core::{parse_spec, ApiSpec, DocumentFormat};

const PROVENANCES: [Provenance; 3] = [Provenance::Heuristic, Provenance::OsDep, Provenance::SsDep];

fn node(i: usize) -> String {
    format!("get-/r{i:02}")
}

fn spec_with(n: usize) -> ApiSpec {
    let mut doc = String::from("openapi: 3.0.0\ninfo:\n  title: synthetic\npaths:\n");
    for i in 0..n {
        doc.push_str(&format!("  /r{i:02}:\n    get:\n      responses:\n        '200':\n          description: ok\n"));
    }
    parse_spec(doc.as_bytes(), DocumentFormat::Yaml).unwrap()
}

fn graph(n: usize, edges: &[(usize, usize, usize)]) -> OperationDependencyGraph {
    let mut g = OperationDependencyGraph::new((0..n).map(node));
    for &(s, t, p) in edges {
        g.add_pair(&node(s), &node(t), FieldPair::new("id", &format!("p{s}")), PROVENANCES[p]);
    }
    g.canonicalize();
    g
}

/// Random DAG: edges only go from a lower to a higher position in a shuffled order.
fn dag() -> impl Strategy<Value = (usize, Vec<(usize, usize, usize)>)> {
    (2usize..=20).prop_flat_map(|n| {
        let order = Just((0..n).collect::<Vec<_>>()).prop_shuffle();
        let pairs = prop::collection::vec((0..n, 0..n, 0usize..3), 0..n * 2);
        (Just(n), order, pairs).prop_map(|(n, order, pairs)| {
            let edges = pairs
                .into_iter()
                .filter(|(a, b, _)| a != b)
                .map(|(a, b, p)| (order[a.min(b)], order[a.max(b)], p))
                .collect();
            (n, edges)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn sequences_respect_every_edge((n, edges) in dag()) {
        let g = graph(n, &edges);
        let spec = spec_with(n);
        let seqs = generate_sequences(&g, &spec).unwrap();
        prop_assert_eq!(seqs.len(), n);
        for (target, seq) in &seqs {
            prop_assert_eq!(seq.steps.last(), Some(target));
            let pos = |op: &str| seq.steps.iter().position(|s| s == op);
            for e in &g.edges {
                if let (Some(s), Some(t)) = (pos(&e.source), pos(&e.target)) {
                    prop_assert!(s < t, "{} -> {} out of order in {:?}", e.source, e.target, seq.steps);
                }
            }
            for b in &seq.bindings {
                prop_assert!(b.from_step < b.to_step);
            }
        }
    }

    #[test]
    fn break_cycles_always_yields_a_dag(n in 2usize..=12, pairs in prop::collection::vec((0usize..12, 0usize..12, 0usize..3), 0..40)) {
        let edges: Vec<_> = pairs.into_iter().filter(|(a, b, _)| a < &n && b < &n && a != b).collect();
        let g = graph(n, &edges);
        let (fixed, removed) = break_cycles(&g);
        prop_assert!(is_acyclic(&fixed));
        prop_assert_eq!(fixed.edges.len() + removed.len(), g.edges.len());
        prop_assert!(generate_sequences(&fixed, &spec_with(n)).is_ok());
    }
}

fn cycle(provs: &[usize]) -> OperationDependencyGraph {
    let n = provs.len();
    let mut g = OperationDependencyGraph::new((0..n).map(node));
    g.edges = provs
        .iter()
        .enumerate()
        .map(|(i, &p)| OdgEdge {
            source: node(i),
            target: node((i + 1) % n),
            field_pairs: vec![FieldPair::new("id", "x")],
            provenance: PROVENANCES[p],
        })
        .collect();
    g
}

#[test]
fn short_cycles_drop_the_weakest_edge() {
    for len in [2usize, 3] {
        let total = 3usize.pow(len as u32);
        for code in 0..total {
            let provs: Vec<usize> = (0..len).map(|k| code / 3usize.pow(k as u32) % 3).collect();
            let g = cycle(&provs);
            let (fixed, removed) = break_cycles(&g);
            assert!(is_acyclic(&fixed));
            assert_eq!(removed.len(), 1, "{provs:?}");
            let weakest = provs.iter().max().copied().unwrap();
            assert_eq!(removed[0].provenance, PROVENANCES[weakest], "{provs:?}");
        }
    }
}
