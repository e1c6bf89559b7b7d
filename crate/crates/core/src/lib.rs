//! Survival modelling over precomputed patient embeddings: Cox-loss neural
//! risk heads, late and intermediate multimodal fusion, censoring-aware
//! metrics, an adjusted Leibovich clinical baseline and a nested stratified
//! cross-validation harness.

pub mod cohort;
pub mod cox;
pub mod experiment;
pub mod fusion;
pub mod leibovich;
pub mod metrics;
pub mod nn;

pub use cohort::{Cohort, EmbeddingMatrix, PatientRecord, SurvivalData, SurvivalOutcome};
pub use metrics::{auroc_horizon, c_index, c_index_random_ties, MetricSummary};
