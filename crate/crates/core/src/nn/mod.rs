//! One-hidden-layer risk network with hand-written backpropagation.
//!
//! Layer order is `linear -> layernorm -> relu -> dropout -> linear`. The
//! network can optionally front a [`CtProjection`]: inputs are then laid out
//! `[wsi | ct]`, the CT block is projected to the WSI width and the MLP sees
//! `[wsi | W·ct + b]`.

mod checkpoint;
mod optim;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use optim::{lr_schedule, Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use train::{
    batch_objective, fit_epochs, train, train_step, Dataset, EpochRecord, TrainConfig, TrainResult, DEFAULT_BATCH_SIZE,
    DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE, DEFAULT_WARMUP_EPOCHS, IMPROVEMENT_EPS, L1_RANGE, LEARNING_RATE_RANGE,
    LR_FLOOR_RANGE, WEIGHT_DECAY_RANGE,
};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::CohortError;
use crate::cox::CoxError;
use crate::fusion::CtProjection;
use crate::metrics::MetricError;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const HIDDEN_RANGE: (usize, usize) = (32, 512);
pub const DROPOUT_RANGE: (f64, f64) = (0.0, 0.5);

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid dimension: {0}")]
    InvalidDim(String),
    #[error("input has {actual} columns, network expects {expected}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("batch has no events")]
    NoEventsInBatch,
    #[error("training set needs at least 2 events, has {0}")]
    DegenerateTrainSet(usize),
    #[error("validation set has no comparable pairs")]
    DegenerateValSet,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Cox(#[from] CoxError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Raw input width (for projected inputs: wsi_dim + ct_dim).
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(NnError::InvalidDim("input_dim must be at least 1".into()));
        }
        if !(HIDDEN_RANGE.0..=HIDDEN_RANGE.1).contains(&self.hidden_dim) {
            return Err(NnError::InvalidDim(format!(
                "hidden_dim {} outside [{}, {}]",
                self.hidden_dim, HIDDEN_RANGE.0, HIDDEN_RANGE.1
            )));
        }
        if !(DROPOUT_RANGE.0..=DROPOUT_RANGE.1).contains(&self.dropout) {
            return Err(NnError::InvalidConfig(format!("dropout {} outside [0, 0.5]", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// hidden × input
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub ln_gain: Array1<f64>,
    pub ln_bias: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

impl MlpParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden_dim, input_dim)),
            b1: Array1::zeros(hidden_dim),
            ln_gain: Array1::zeros(hidden_dim),
            ln_bias: Array1::zeros(hidden_dim),
            w2: Array1::zeros(hidden_dim),
            b2: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }
}

/// Uniform fan-in init (bound 1/√fan_in), unit LN gain, zero biases.
pub fn init_params(config: &MlpConfig) -> Result<MlpParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(init_mlp(config.input_dim, config.hidden_dim, &mut rng))
}

fn init_mlp(input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> MlpParams {
    let b1 = 1.0 / (input_dim as f64).sqrt();
    let b2 = 1.0 / (hidden_dim as f64).sqrt();
    MlpParams {
        w1: Array2::from_shape_fn((hidden_dim, input_dim), |_| rng.random_range(-b1..=b1)),
        b1: Array1::zeros(hidden_dim),
        ln_gain: Array1::ones(hidden_dim),
        ln_bias: Array1::zeros(hidden_dim),
        w2: Array1::from_shape_fn(hidden_dim, |_| rng.random_range(-b2..=b2)),
        b2: 0.0,
    }
}

/// How raw input columns reach the MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputLayout {
    Direct,
    /// `[wsi | ct]` with the CT block projected to `wsi_dim`.
    ProjectCt { wsi_dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskNet {
    pub projection: Option<CtProjection>,
    pub mlp: MlpParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    /// Weight matrices: penalised by L1 and weight decay.
    Weight,
    Other,
}

pub enum Mode<'a> {
    Eval,
    Train { dropout: f64, rng: &'a mut ChaCha8Rng },
}

pub struct ForwardCache {
    input: Array2<f64>,
    mlp_input: Array2<f64>,
    normed: Array2<f64>,
    inv_std: Array1<f64>,
    pre_act: Array2<f64>,
    keep_scale: Option<Array2<f64>>,
    hidden: Array2<f64>,
}

impl RiskNet {
    pub fn init(config: &MlpConfig, layout: InputLayout) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        match layout {
            InputLayout::Direct => Ok(Self {
                projection: None,
                mlp: init_mlp(config.input_dim, config.hidden_dim, &mut rng),
            }),
            InputLayout::ProjectCt { wsi_dim } => {
                if wsi_dim == 0 || wsi_dim >= config.input_dim {
                    return Err(NnError::InvalidDim(format!(
                        "wsi_dim {wsi_dim} must be in [1, {})",
                        config.input_dim
                    )));
                }
                let ct_dim = config.input_dim - wsi_dim;
                let mlp = init_mlp(2 * wsi_dim, config.hidden_dim, &mut rng);
                let projection = CtProjection::init(wsi_dim, ct_dim, &mut rng);
                Ok(Self {
                    projection: Some(projection),
                    mlp,
                })
            }
        }
    }

    pub fn from_mlp(mlp: MlpParams) -> Self {
        Self { projection: None, mlp }
    }

    pub fn layout(&self) -> InputLayout {
        match &self.projection {
            None => InputLayout::Direct,
            Some(p) => InputLayout::ProjectCt { wsi_dim: p.wsi_dim() },
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.projection {
            None => self.mlp.input_dim(),
            Some(p) => p.wsi_dim() + p.ct_dim(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            projection: self.projection.as_ref().map(|p| CtProjection::zeros(p.wsi_dim(), p.ct_dim())),
            mlp: MlpParams::zeros(self.mlp.input_dim(), self.mlp.hidden_dim()),
        }
    }

    /// Parameter tensors in a fixed order: projection (W, b), then W1, b1,
    /// LN gain, LN bias, W2, b2.
    pub fn tensors(&self) -> Vec<(TensorKind, &[f64])> {
        let mut out = Vec::with_capacity(8);
        if let Some(p) = &self.projection {
            out.push((TensorKind::Weight, p.w.as_slice().expect("standard layout")));
            out.push((TensorKind::Other, p.b.as_slice().expect("standard layout")));
        }
        let m = &self.mlp;
        out.push((TensorKind::Weight, m.w1.as_slice().expect("standard layout")));
        out.push((TensorKind::Other, m.b1.as_slice().expect("standard layout")));
        out.push((TensorKind::Other, m.ln_gain.as_slice().expect("standard layout")));
        out.push((TensorKind::Other, m.ln_bias.as_slice().expect("standard layout")));
        out.push((TensorKind::Weight, m.w2.as_slice().expect("standard layout")));
        out.push((TensorKind::Other, std::slice::from_ref(&m.b2)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorKind, &mut [f64])> {
        let mut out = Vec::with_capacity(8);
        if let Some(p) = &mut self.projection {
            out.push((TensorKind::Weight, p.w.as_slice_mut().expect("standard layout")));
            out.push((TensorKind::Other, p.b.as_slice_mut().expect("standard layout")));
        }
        let m = &mut self.mlp;
        out.push((TensorKind::Weight, m.w1.as_slice_mut().expect("standard layout")));
        out.push((TensorKind::Other, m.b1.as_slice_mut().expect("standard layout")));
        out.push((TensorKind::Other, m.ln_gain.as_slice_mut().expect("standard layout")));
        out.push((TensorKind::Other, m.ln_bias.as_slice_mut().expect("standard layout")));
        out.push((TensorKind::Weight, m.w2.as_slice_mut().expect("standard layout")));
        out.push((TensorKind::Other, std::slice::from_mut(&mut m.b2)));
        out
    }

    pub fn weight_l1(&self) -> f64 {
        self.tensors()
            .into_iter()
            .filter(|(k, _)| *k == TensorKind::Weight)
            .flat_map(|(_, t)| t.iter())
            .map(|v| v.abs())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Eval-mode scores.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(self.forward(x, Mode::Eval)?.0.to_vec())
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>, mode: Mode<'_>) -> Result<(Array1<f64>, ForwardCache)> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::DimMismatch {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        let mlp_input = match &self.projection {
            None => x.to_owned(),
            Some(p) => {
                let w = p.wsi_dim();
                let projected = p.project_batch(x.slice(s![.., w..]));
                ndarray::concatenate(Axis(1), &[x.slice(s![.., ..w]), projected.view()]).expect("matching rows")
            }
        };
        let m = &self.mlp;
        let pre_norm = mlp_input.dot(&m.w1.t()) + &m.b1;
        let (normed, inv_std) = layer_norm(&pre_norm);
        let pre_act = &normed * &m.ln_gain + &m.ln_bias;
        let mut hidden = pre_act.mapv(|v| v.max(0.0));
        let keep_scale = match mode {
            Mode::Train { dropout, rng } if dropout > 0.0 => {
                let scale = 1.0 / (1.0 - dropout);
                let mask = Array2::from_shape_fn(hidden.raw_dim(), |_| if rng.random::<f64>() < dropout { 0.0 } else { scale });
                hidden *= &mask;
                Some(mask)
            }
            _ => None,
        };
        let eta = hidden.dot(&m.w2) + m.b2;
        Ok((
            eta,
            ForwardCache {
                input: x.to_owned(),
                mlp_input,
                normed,
                inv_std,
                pre_act,
                keep_scale,
                hidden,
            },
        ))
    }

    /// Parameter gradients of `Σ_b d_eta[b]·η_b`.
    pub fn backward(&self, cache: &ForwardCache, d_eta: &Array1<f64>) -> RiskNet {
        let m = &self.mlp;
        let mut grad = self.zeros_like();
        grad.mlp.b2 = d_eta.sum();
        grad.mlp.w2 = cache.hidden.t().dot(d_eta);

        let mut d_hidden = outer(d_eta, &m.w2);
        if let Some(mask) = &cache.keep_scale {
            d_hidden *= mask;
        }
        let d_pre_act = ndarray::Zip::from(&d_hidden)
            .and(&cache.pre_act)
            .map_collect(|&g, &a| if a > 0.0 { g } else { 0.0 });
        grad.mlp.ln_gain = (&d_pre_act * &cache.normed).sum_axis(Axis(0));
        grad.mlp.ln_bias = d_pre_act.sum_axis(Axis(0));
        let d_normed = &d_pre_act * &m.ln_gain;
        let d_pre_norm = layer_norm_backward(&d_normed, &cache.normed, &cache.inv_std);
        grad.mlp.w1 = d_pre_norm.t().dot(&cache.mlp_input).as_standard_layout().into_owned();
        grad.mlp.b1 = d_pre_norm.sum_axis(Axis(0));

        if let (Some(p), Some(gp)) = (&self.projection, &mut grad.projection) {
            let w = p.wsi_dim();
            let d_mlp_input = d_pre_norm.dot(&m.w1);
            *gp = p.backward(cache.input.slice(s![.., w..]), d_mlp_input.slice(s![.., w..]));
        }
        grad
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Row-wise standardisation (biased variance, ε = 1e-5).
fn layer_norm(h: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let width = h.ncols() as f64;
    let mut normed = h.clone();
    let mut inv_std = Array1::zeros(h.nrows());
    for (mut row, inv) in normed.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / width;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width;
        *inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * *inv);
    }
    (normed, inv_std)
}

fn layer_norm_backward(d_normed: &Array2<f64>, normed: &Array2<f64>, inv_std: &Array1<f64>) -> Array2<f64> {
    let width = d_normed.ncols() as f64;
    let mut out = Array2::zeros(d_normed.raw_dim());
    for (((mut o, g), n), &inv) in out
        .rows_mut()
        .into_iter()
        .zip(d_normed.rows())
        .zip(normed.rows())
        .zip(inv_std)
    {
        let mean_g = g.sum() / width;
        let mean_gn = g.iter().zip(n.iter()).map(|(a, b)| a * b).sum::<f64>() / width;
        for ((o, &g), &n) in o.iter_mut().zip(g).zip(n) {
            *o = inv * (g - mean_g - n * mean_gn);
        }
    }
    out
}
