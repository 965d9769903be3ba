//! Sequences, constraints, datasets and plan from a built graph.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::datagen::{
    detect_inter_param_constraints, generate_dataset, mutate_for_failure, ConstraintSet, DataGenError, DatasetMode,
};
use crate::llm::LlmBackend;
use crate::oas::ApiSpec;
use crate::odg::{OdgEdge, OperationDependencyGraph};
use crate::plan::{build_plan, Datasets, PlanError, TestPlan};
use crate::sequence::{break_cycles, generate_sequences_with, CycleError, ElementChoice, OperationSequence};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error(transparent)]
    DataGen(#[from] DataGenError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub sequences: BTreeMap<String, OperationSequence>,
    /// Edges dropped to make the graph acyclic.
    pub removed_edges: Vec<OdgEdge>,
    pub constraints: BTreeMap<String, ConstraintSet>,
    /// Invalid sets hold model items followed by mutation items.
    pub datasets: Datasets,
    pub plan: TestPlan,
    pub warnings: Vec<String>,
}

/// An operation without usable invalid items is skipped with a warning;
/// without valid items the whole run fails.
pub fn generate(
    spec: &ApiSpec,
    g: &OperationDependencyGraph,
    backend: &dyn LlmBackend,
    seed: u64,
    choice: ElementChoice,
) -> Result<Generated, PipelineError> {
    let mut warnings = Vec::new();
    let (acyclic, removed_edges) = break_cycles(g);
    for e in &removed_edges {
        warnings.push(format!("dropped {:?} edge {} -> {} to break a cycle", e.provenance, e.source, e.target));
    }
    let sequences = generate_sequences_with(&acyclic, spec, choice)?;

    let mut constraints = BTreeMap::new();
    let mut datasets = Datasets::default();
    for op in &spec.operations {
        let cs = detect_inter_param_constraints(op, backend);
        let valid = generate_dataset(op, &cs, DatasetMode::Valid, backend)?;
        let mut invalid = match generate_dataset(op, &cs, DatasetMode::Invalid, backend) {
            Ok(d) => d,
            Err(e @ DataGenError::EmptyDataset { .. }) => {
                warnings.push(e.to_string());
                let mut d = valid.clone();
                d.mode = DatasetMode::Invalid;
                d.items.clear();
                d
            }
            Err(e) => return Err(e.into()),
        };
        invalid.items.extend(mutate_for_failure(op, &valid, &cs, seed).items);
        datasets.valid.insert(op.id.clone(), valid);
        datasets.invalid.insert(op.id.clone(), invalid);
        constraints.insert(op.id.clone(), cs);
    }

    let plan = build_plan(spec, &sequences, &datasets, &acyclic, seed)?;
    Ok(Generated {
        sequences,
        removed_edges,
        constraints,
        datasets,
        plan,
        warnings,
    })
}
