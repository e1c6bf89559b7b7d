//! Nested cross-validation protocol: fixed stratified folds, per-fold
//! hyperparameter search, epoch selection, strategy evaluation and report
//! emission.

mod folds;
mod report;
mod runner;
mod search;

pub use folds::{make_fold_plan, FoldPlan, INNER_FOLDS, OUTER_FOLDS};
pub use report::{
    emit_report, parse_results, read_fold_assignments, render_table, sha256_hex, summarize_records,
    write_fold_assignments, FoldAssignment, Provenance, ResultRecord, METADATA_FILE, METHOD_NOTES, RESULTS_FILE,
    SUMMARY_FILE,
};
pub use runner::{
    run_experiment, run_strategy, verify_no_leakage, ExperimentConfig, FoldOutcome, StrategyResult,
    DEFAULT_TIE_REPEATS,
};
pub use search::{
    search_hyperparameters, search_with, select_best_trial, select_epochs, InnerRecord, RandomSearch, SearchOutcome,
    SearchSpace, SearchSpec, TrialConfig, TrialRecord, TrialSampler, SEARCH_SPACE,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{CohortError, CT, WSI};
use crate::fusion::FusionError;
use crate::leibovich::LeibovichError;
use crate::metrics::MetricError;
use crate::nn::{InputLayout, NnError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("stratification needs at least 5 events and 5 censored patients, have {events} and {censored}")]
    InfeasibleStratification { events: usize, censored: usize },
    #[error("outer fold {fold}, inner fold {inner}: {reason}")]
    DegenerateInnerFold { fold: usize, inner: usize, reason: String },
    #[error("outer fold {fold}: {reason}")]
    DegenerateOuterFold { fold: usize, reason: String },
    #[error("no inner-fold records to select epochs from")]
    MissingInnerRecords,
    #[error("cohort lacks modality {0:?}")]
    MissingModality(String),
    #[error("patient {patient:?} used for training in fold {fold} is also an outer-test patient")]
    Leakage { fold: usize, patient: String },
    #[error("invalid search spec: {0}")]
    InvalidSearchSpec(String),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("nothing to report")]
    NoResults,
    #[error("malformed results file line {line}: {message}")]
    MalformedResults { line: usize, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Leibovich(#[from] LeibovichError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = ExperimentError> = std::result::Result<T, E>;

/// Evaluated strategies, in report order. The order also breaks ties
/// between equal mean C-indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    UnimodalWsi,
    UnimodalCt,
    Late,
    Intermediate,
    Leibovich,
    LeibovichRt,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::UnimodalWsi,
        Strategy::UnimodalCt,
        Strategy::Late,
        Strategy::Intermediate,
        Strategy::Leibovich,
        Strategy::LeibovichRt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::UnimodalWsi => "unimodal_wsi",
            Strategy::UnimodalCt => "unimodal_ct",
            Strategy::Late => "late",
            Strategy::Intermediate => "intermediate",
            Strategy::Leibovich => "leibovich",
            Strategy::LeibovichRt => "leibovich_rt",
        }
    }

    /// Strategies with trained models (the clinical baselines are not).
    pub fn is_learned(self) -> bool {
        !matches!(self, Strategy::Leibovich | Strategy::LeibovichRt)
    }

    /// Models that must be fitted per outer fold.
    pub fn models(self) -> &'static [ModelKind] {
        match self {
            Strategy::UnimodalWsi => &[ModelKind::Wsi],
            Strategy::UnimodalCt => &[ModelKind::Ct],
            Strategy::Late => &[ModelKind::Wsi, ModelKind::Ct],
            Strategy::Intermediate => &[ModelKind::Intermediate],
            Strategy::Leibovich | Strategy::LeibovichRt => &[],
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| ExperimentError::UnknownStrategy(s.to_string()))
    }
}

/// A trainable risk model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Wsi,
    Ct,
    Intermediate,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Wsi => WSI,
            ModelKind::Ct => CT,
            ModelKind::Intermediate => "intermediate",
        }
    }

    pub fn modalities(self) -> &'static [&'static str] {
        match self {
            ModelKind::Wsi => &[WSI],
            ModelKind::Ct => &[CT],
            ModelKind::Intermediate => &[WSI, CT],
        }
    }

    fn tag(self) -> u64 {
        match self {
            ModelKind::Wsi => 1,
            ModelKind::Ct => 2,
            ModelKind::Intermediate => 3,
        }
    }

    pub fn layout(self, wsi_dim: usize) -> InputLayout {
        match self {
            ModelKind::Intermediate => InputLayout::ProjectCt { wsi_dim },
            _ => InputLayout::Direct,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for a path of indices under `master`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |s, &p| splitmix64(s ^ splitmix64(p)))
}
