//! Dependency-aware black-box test generation for REST APIs.
//!
//! The pipeline reads an OpenAPI 3 document ([`oas`]), builds an operation
//! dependency graph from exact field-name matches plus language-model
//! inferred operation/schema dependencies ([`odg`]), orders prerequisite
//! calls per operation ([`sequence`]), generates constrained valid and
//! invalid inputs ([`datagen`]), assembles executable plans ([`plan`]), runs
//! them over HTTP ([`runner`]) and scores the outcome ([`metrics`]).
//!
//! Every language-model call goes through [`llm`], which ships a
//! deterministic mock so the whole pipeline works offline.

pub mod datagen;
pub mod fixtures;
pub mod llm;
pub mod metrics;
pub mod mock_service;
pub mod oas;
pub mod odg;
pub mod pipeline;
pub mod plan;
pub mod runner;
pub mod sequence;
pub mod tokens;

pub use datagen::{ConstraintPredicate, ConstraintSet, DataItem, Dataset, DatasetMode};
pub use llm::{BackendConfig, LlmBackend, MockBackend, PromptRequest, TemplateId};
pub use metrics::{CoverageReport, EfficiencyReport, FailureReport, SuiteReport};
pub use oas::{parse_spec, ApiSpec, DocumentFormat, OperationDef, ParameterDef, SchemaDef};
pub use odg::{OdgEdge, OperationDependencyGraph, OperationSchemaDeps, Provenance, SchemaSchemaDeps};
pub use plan::{TestCase, TestPlan, TestStep};
pub use runner::{ExecutionResult, HttpResponseRecord, Verdict};
pub use sequence::OperationSequence;
