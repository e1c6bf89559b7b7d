//! Cohort data model: survival outcomes, per-modality embedding matrices and
//! the patient records tying them together.

mod femb;
mod manifest;
mod synth;

pub use femb::{read_embeddings, write_embeddings, FEMB_MAGIC, FEMB_VERSION};
pub use manifest::{load_manifest, write_manifest, MANIFEST_HEADER};
pub use synth::{calibrate_censoring_rate, generate_synthetic_cohort, GroundTruth, ModalitySpec, SyntheticSpec};

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use ndarray::Array2;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::leibovich::LeibovichFeatures;

pub const WSI: &str = "wsi";
pub const CT: &str = "ct";

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("duplicate patient id {0:?}")]
    DuplicatePatientId(String),
    #[error("malformed manifest row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("dimension mismatch for modality {modality:?}: expected {expected}, got {actual}")]
    DimensionMismatch {
        modality: String,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error("bad magic bytes in embedding file")]
    BadMagic,
    #[error("unsupported embedding format version {0}")]
    UnsupportedVersion(u16),
    #[error("embedding file truncated: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("invalid survival outcome: {0}")]
    InvalidOutcome(String),
    #[error("patient {patient:?} references unknown modality {modality:?}")]
    UnknownModality { patient: String, modality: String },
    #[error("patient {patient:?} row {row} out of bounds for modality {modality:?} ({n_rows} rows)")]
    RowOutOfBounds {
        patient: String,
        modality: String,
        row: usize,
        n_rows: usize,
    },
    #[error("patient {patient:?} has no embedding for modality {modality:?}")]
    MissingEmbedding { patient: String, modality: String },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("length mismatch: {0} times vs {1} events")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = CohortError> = std::result::Result<T, E>;

/// Observed follow-up for one patient. `time_months` is the time to the
/// event when `event` is set, otherwise the censoring time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalOutcome {
    pub time_months: f64,
    pub event: bool,
}

impl SurvivalOutcome {
    pub fn new(time_months: f64, event: bool) -> Result<Self> {
        if !(time_months.is_finite() && time_months > 0.0) {
            return Err(CohortError::InvalidOutcome(format!(
                "time_months must be positive and finite, got {time_months}"
            )));
        }
        Ok(Self { time_months, event })
    }
}

/// Parallel vectors of observed times and event indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalData {
    times: Vec<f64>,
    events: Vec<bool>,
}

impl SurvivalData {
    pub fn new(times: Vec<f64>, events: Vec<bool>) -> Result<Self> {
        if times.len() != events.len() {
            return Err(CohortError::LengthMismatch(times.len(), events.len()));
        }
        for &t in &times {
            SurvivalOutcome::new(t, false)?;
        }
        Ok(Self { times, events })
    }

    pub fn from_outcomes(outcomes: &[SurvivalOutcome]) -> Self {
        Self {
            times: outcomes.iter().map(|o| o.time_months).collect(),
            events: outcomes.iter().map(|o| o.event).collect(),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.events.iter().filter(|&&e| e).count()
    }

    /// Rows `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            times: indices.iter().map(|&i| self.times[i]).collect(),
            events: indices.iter().map(|&i| self.events[i]).collect(),
        }
    }
}

/// Dense N×D patient-level features for one modality, stored as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    modality: String,
    n_rows: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(modality: impl Into<String>, n_rows: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        let modality = modality.into();
        if dim == 0 {
            return Err(CohortError::DimensionMismatch {
                modality,
                expected: 1,
                actual: 0,
            });
        }
        if values.len() != n_rows * dim {
            return Err(CohortError::DimensionMismatch {
                modality,
                expected: n_rows * dim,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CohortError::NonFiniteValue(format!("{modality} embedding matrix")));
        }
        Ok(Self {
            modality,
            n_rows,
            dim,
            values,
        })
    }

    pub fn modality(&self) -> &str {
        &self.modality
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub outcome: SurvivalOutcome,
    /// modality name -> row of that modality's matrix in the owning cohort
    pub embeddings: BTreeMap<String, usize>,
    pub leibovich: Option<LeibovichFeatures>,
}

/// A validated set of patients and the embedding matrices they reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    patients: Vec<PatientRecord>,
    matrices: BTreeMap<String, EmbeddingMatrix>,
}

impl Cohort {
    pub fn new(patients: Vec<PatientRecord>, matrices: BTreeMap<String, EmbeddingMatrix>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &patients {
            if p.patient_id.is_empty() {
                return Err(CohortError::InvalidOutcome("empty patient id".into()));
            }
            if !seen.insert(p.patient_id.as_str()) {
                return Err(CohortError::DuplicatePatientId(p.patient_id.clone()));
            }
            SurvivalOutcome::new(p.outcome.time_months, p.outcome.event)?;
            for (modality, &row) in &p.embeddings {
                let m = matrices.get(modality).ok_or_else(|| CohortError::UnknownModality {
                    patient: p.patient_id.clone(),
                    modality: modality.clone(),
                })?;
                if row >= m.n_rows() {
                    return Err(CohortError::RowOutOfBounds {
                        patient: p.patient_id.clone(),
                        modality: modality.clone(),
                        row,
                        n_rows: m.n_rows(),
                    });
                }
            }
        }
        Ok(Self { patients, matrices })
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn matrices(&self) -> &BTreeMap<String, EmbeddingMatrix> {
        &self.matrices
    }

    pub fn matrix(&self, modality: &str) -> Option<&EmbeddingMatrix> {
        self.matrices.get(modality)
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.patients.iter().map(|p| p.patient_id.as_str()).collect()
    }

    pub fn survival_data(&self) -> SurvivalData {
        let outcomes: Vec<_> = self.patients.iter().map(|p| p.outcome).collect();
        SurvivalData::from_outcomes(&outcomes)
    }

    pub fn modality_dim(&self, modality: &str) -> Option<usize> {
        self.matrices.get(modality).map(EmbeddingMatrix::dim)
    }

    /// Digest over ids, outcomes, row references, clinical features and
    /// every embedding value; independent of file layout.
    pub fn content_sha256(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.patients {
            h.update((p.patient_id.len() as u64).to_le_bytes());
            h.update(p.patient_id.as_bytes());
            h.update(p.outcome.time_months.to_le_bytes());
            h.update([u8::from(p.outcome.event)]);
            for (m, row) in &p.embeddings {
                h.update(m.as_bytes());
                h.update((*row as u64).to_le_bytes());
            }
            match &p.leibovich {
                Some(f) => h.update(format!("{}|{}|{}|{}", f.t_stage, f.n_stage, f.tumor_size_cm, f.grade).as_bytes()),
                None => h.update(b"-"),
            }
        }
        for (name, m) in &self.matrices {
            h.update(name.as_bytes());
            h.update((m.n_rows as u64).to_le_bytes());
            h.update((m.dim as u64).to_le_bytes());
            for v in &m.values {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Feature matrix for `indices`, concatenating the listed modalities
    /// column-wise in the given order, widened to f64.
    pub fn features(&self, modalities: &[&str], indices: &[usize]) -> Result<Array2<f64>> {
        let mut mats = Vec::with_capacity(modalities.len());
        for &m in modalities {
            let mat = self.matrices.get(m).ok_or_else(|| CohortError::UnknownModality {
                patient: String::new(),
                modality: m.to_string(),
            })?;
            mats.push((m, mat));
        }
        let width: usize = mats.iter().map(|(_, m)| m.dim()).sum();
        let mut out = Array2::zeros((indices.len(), width));
        for (r, &i) in indices.iter().enumerate() {
            let p = &self.patients[i];
            let mut col = 0;
            for (name, mat) in &mats {
                let row = *p.embeddings.get(*name).ok_or_else(|| CohortError::MissingEmbedding {
                    patient: p.patient_id.clone(),
                    modality: name.to_string(),
                })?;
                for (k, &v) in mat.row(row).iter().enumerate() {
                    out[[r, col + k]] = f64::from(v);
                }
                col += mat.dim();
            }
        }
        Ok(out)
    }
}
