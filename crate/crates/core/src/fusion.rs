//! Late fusion of per-modality risk scores and the CT projection used by
//! intermediate (concatenation) fusion.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::SurvivalData;
use crate::metrics::{c_index, MetricError};

pub const DEFAULT_ALPHA_STEP: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("alpha grid step must be in (0, 1], got {0}")]
    InvalidStep(f64),
    #[error("validation split has no comparable pairs")]
    DegenerateValSet,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Weight on the WSI score; `1 - alpha` goes to CT.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LateFusionWeight(f64);

impl LateFusionWeight {
    pub fn new(alpha: f64) -> Result<Self, FusionError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(FusionError::InvalidAlpha(alpha));
        }
        Ok(Self(alpha))
    }

    pub fn alpha(self) -> f64 {
        self.0
    }
}

pub fn late_fuse(r_wsi: &[f64], r_ct: &[f64], w: LateFusionWeight) -> Result<Vec<f64>, FusionError> {
    if r_wsi.len() != r_ct.len() {
        return Err(FusionError::LengthMismatch(r_wsi.len(), r_ct.len()));
    }
    let a = w.alpha();
    Ok(r_wsi.iter().zip(r_ct).map(|(w, c)| a * w + (1.0 - a) * c).collect())
}

/// One validation split's per-modality predictions.
#[derive(Debug, Clone, Copy)]
pub struct FusionSplit<'a> {
    pub r_wsi: &'a [f64],
    pub r_ct: &'a [f64],
    pub data: &'a SurvivalData,
}

/// Grid search over `{0, step, ..., 1}` for the weight maximising the mean
/// validation C-index across `splits`. Ties go to the larger alpha.
pub fn tune_alpha_splits(splits: &[FusionSplit<'_>], grid_step: f64) -> Result<LateFusionWeight, FusionError> {
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(FusionError::InvalidStep(grid_step));
    }
    if splits.is_empty() {
        return Err(FusionError::DegenerateValSet);
    }
    let steps = (1.0 / grid_step).round() as usize;
    let mut best: Option<(f64, f64)> = None;
    for k in (0..=steps).rev() {
        let alpha = k as f64 / steps as f64;
        let w = LateFusionWeight(alpha);
        let mut total = 0.0;
        for s in splits {
            let fused = late_fuse(s.r_wsi, s.r_ct, w)?;
            total += c_index(s.data, &fused).map_err(|e| match e {
                MetricError::NoComparablePairs => FusionError::DegenerateValSet,
                other => other.into(),
            })?;
        }
        let score = total / splits.len() as f64;
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, alpha));
        }
    }
    Ok(LateFusionWeight(best.map(|(_, a)| a).unwrap_or(1.0)))
}

pub fn tune_alpha(r_wsi: &[f64], r_ct: &[f64], val: &SurvivalData, grid_step: f64) -> Result<LateFusionWeight, FusionError> {
    tune_alpha_splits(
        &[FusionSplit {
            r_wsi,
            r_ct,
            data: val,
        }],
        grid_step,
    )
}

/// Fully connected map from the CT embedding to the WSI embedding width.
#[derive(Debug, Clone, PartialEq)]
pub struct CtProjection {
    /// wsi_dim × ct_dim
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl CtProjection {
    pub fn zeros(wsi_dim: usize, ct_dim: usize) -> Self {
        Self {
            w: Array2::zeros((wsi_dim, ct_dim)),
            b: Array1::zeros(wsi_dim),
        }
    }

    /// Uniform in ±1/√ct_dim, zero bias.
    pub fn init(wsi_dim: usize, ct_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (ct_dim as f64).sqrt();
        let w = Array2::from_shape_fn((wsi_dim, ct_dim), |_| rng.random_range(-bound..=bound));
        Self {
            w,
            b: Array1::zeros(wsi_dim),
        }
    }

    pub fn wsi_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn ct_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn project(&self, e_ct: &[f64]) -> Result<Vec<f64>, FusionError> {
        if e_ct.len() != self.ct_dim() {
            return Err(FusionError::DimMismatch {
                expected: self.ct_dim(),
                actual: e_ct.len(),
            });
        }
        Ok(self
            .w
            .rows()
            .into_iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(e_ct).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect())
    }

    /// Row-wise projection of a batch (B × ct_dim) to B × wsi_dim.
    pub fn project_batch(&self, e_ct: ArrayView2<'_, f64>) -> Array2<f64> {
        e_ct.dot(&self.w.t()) + &self.b
    }

    /// Parameter gradients given the upstream gradient on the projected
    /// block and the batch inputs.
    pub fn backward(&self, e_ct: ArrayView2<'_, f64>, d_out: ArrayView2<'_, f64>) -> CtProjection {
        CtProjection {
            w: d_out.t().dot(&e_ct).as_standard_layout().into_owned(),
            b: d_out.sum_axis(Axis(0)),
        }
    }
}

/// WSI block first, then the projected CT block.
pub fn concat_embeddings(e_wsi: &[f64], e_ct_proj: &[f64]) -> Result<Vec<f64>, FusionError> {
    if e_wsi.len() != e_ct_proj.len() {
        return Err(FusionError::DimMismatch {
            expected: e_wsi.len(),
            actual: e_ct_proj.len(),
        });
    }
    Ok(e_wsi.iter().chain(e_ct_proj).copied().collect())
}
