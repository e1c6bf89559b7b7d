use survfuse::cohort::CohortError;
use survfuse::experiment::ExperimentError;
use survfuse::fusion::FusionError;
use survfuse::leibovich::LeibovichError;
use survfuse::metrics::MetricError;
use survfuse::nn::NnError;
use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Degenerate(_) => 4,
            CliError::DimMismatch(_) => 5,
            CliError::Internal(_) => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        let msg = e.to_string();
        match e {
            MetricError::LengthMismatch { .. } => CliError::DimMismatch(msg),
            MetricError::TooFewRepeats(_) => CliError::Config(msg),
            _ => CliError::Degenerate(msg),
        }
    }
}

impl From<CohortError> for CliError {
    fn from(e: CohortError) -> Self {
        let msg = e.to_string();
        match e {
            CohortError::DimensionMismatch { .. } => CliError::DimMismatch(msg),
            CohortError::InvalidSpec(_) => CliError::Config(msg),
            _ => CliError::Io(msg),
        }
    }
}

impl From<LeibovichError> for CliError {
    fn from(e: LeibovichError) -> Self {
        let msg = e.to_string();
        match e {
            LeibovichError::NoCompleteFeatures => CliError::Degenerate(msg),
            LeibovichError::BadTable { .. } => CliError::Config(msg),
            _ => CliError::Io(msg),
        }
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        let msg = e.to_string();
        match e {
            FusionError::LengthMismatch(..) | FusionError::DimMismatch { .. } => CliError::DimMismatch(msg),
            FusionError::InvalidAlpha(_) | FusionError::InvalidStep(_) => CliError::Config(msg),
            FusionError::DegenerateValSet => CliError::Degenerate(msg),
            FusionError::Metric(m) => m.into(),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        let msg = e.to_string();
        match e {
            NnError::DimMismatch { .. } | NnError::InvalidDim(_) => CliError::DimMismatch(msg),
            NnError::NoEventsInBatch | NnError::DegenerateTrainSet(_) | NnError::DegenerateValSet => {
                CliError::Degenerate(msg)
            }
            NnError::InvalidConfig(_) => CliError::Config(msg),
            NnError::BadCheckpoint(_) | NnError::Io(_) => CliError::Io(msg),
            NnError::Cox(_) => CliError::Degenerate(msg),
            NnError::Metric(m) => m.into(),
            NnError::Cohort(c) => c.into(),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        let msg = e.to_string();
        match e {
            ExperimentError::InfeasibleStratification { .. }
            | ExperimentError::DegenerateInnerFold { .. }
            | ExperimentError::DegenerateOuterFold { .. }
            | ExperimentError::MissingInnerRecords => CliError::Degenerate(msg),
            ExperimentError::MissingModality(_)
            | ExperimentError::InvalidSearchSpec(_)
            | ExperimentError::UnknownStrategy(_)
            | ExperimentError::NoResults => CliError::Config(msg),
            ExperimentError::Leakage { .. } => CliError::Internal(msg),
            ExperimentError::MalformedResults { .. }
            | ExperimentError::Io(_)
            | ExperimentError::Json(_)
            | ExperimentError::Csv(_) => CliError::Io(msg),
            ExperimentError::Nn(e) => e.into(),
            ExperimentError::Fusion(e) => e.into(),
            ExperimentError::Metric(e) => e.into(),
            ExperimentError::Cohort(e) => e.into(),
            ExperimentError::Leibovich(e) => e.into(),
        }
    }
}
