//! Model-agnostic counterfactual explanation engine.
//!
//! Given a tabular dataset, a black-box classifier and a query instance, the
//! pipeline produces sparse, proximal, diverse counterfactual examples in
//! four stages: candidate feature selection from target-class nearest
//! neighbors, policy-gradient feature optimization, greedy diverse example
//! selection, and gradientless continuous fine-tuning.

pub mod error;
pub mod gld;
pub mod model;
pub mod pipeline;
pub mod policy;
pub mod rank;
pub mod remote;
pub mod select;
pub mod synth;
pub mod tabular;
pub mod timeseries;

pub use error::{MaceError, Result};
pub use gld::{fine_tune, gld_optimize, GldParams};
pub use model::{BoostedStumps, Classifier, ConstantModel, LogisticModel, TargetSpec};
pub use pipeline::{explain, evaluate_run, greedy_baseline, ExplanationReport, Method, PipelineConfig};
pub use policy::{
    apply_action, brute_force_optimal, greedy_construct, policy_log_prob, reinforce_train,
    sample_action, sample_valid_batch, Action, PolicyParams, RlHyperparams,
};
pub use rank::{
    evaluate_metrics, proximity, select_diverse, CfExample, MetricsSummary, Provenance,
    SelectionParams,
};
pub use remote::RemoteScorer;
pub use select::{build_indices, restrict_actionable, select_candidates, CandidateFeatures, ClassIndex};
pub use tabular::{
    encode_for_knn, fit_encoders, load_dataset, normalize_continuous, Column, ColumnKind, Dataset,
    EncoderState, Instance, Schema, Value,
};
