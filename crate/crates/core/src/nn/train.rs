//! Minibatch training with the Cox objective, early stopping on validation
//! C-index.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{lr_schedule, Adam, InputLayout, MlpConfig, Mode, NnError, Result, RiskNet, TensorKind};
use crate::cohort::SurvivalData;
use crate::cox::{cox_loss_and_grad, CoxError};
use crate::metrics::{c_index, concordance_counts};

pub const DEFAULT_MAX_EPOCHS: usize = 200;
pub const DEFAULT_PATIENCE: usize = 10;
pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const DEFAULT_WARMUP_EPOCHS: usize = 10;
/// Validation C-index must beat the best so far by more than this.
pub const IMPROVEMENT_EPS: f64 = 1e-6;

pub const LEARNING_RATE_RANGE: (f64, f64) = (1e-5, 1e-3);
pub const WEIGHT_DECAY_RANGE: (f64, f64) = (1e-6, 1e-2);
pub const L1_RANGE: (f64, f64) = (1e-6, 1e-2);
pub const LR_FLOOR_RANGE: (f64, f64) = (1e-6, 1e-2);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub l1_penalty: f64,
    pub lr_floor: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    /// Use the whole training set as one batch (exact risk sets).
    pub full_batch: bool,
    /// Seeds minibatch shuffling and dropout.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            l1_penalty: 1e-4,
            lr_floor: 1e-6,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            batch_size: DEFAULT_BATCH_SIZE,
            warmup_epochs: DEFAULT_WARMUP_EPOCHS,
            full_batch: false,
            seed: 0,
        }
    }
}

fn in_range(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo..=hi).contains(&v) {
        return Err(NnError::InvalidConfig(format!("{name} {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        in_range("learning_rate", self.learning_rate, LEARNING_RATE_RANGE)?;
        in_range("weight_decay", self.weight_decay, WEIGHT_DECAY_RANGE)?;
        in_range("l1_penalty", self.l1_penalty, L1_RANGE)?;
        in_range("lr_floor", self.lr_floor, LR_FLOOR_RANGE)?;
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(NnError::InvalidConfig("max_epochs, patience and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Feature rows with their outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub data: SurvivalData,
}

impl Dataset {
    pub fn new(x: Array2<f64>, data: SurvivalData) -> Result<Self> {
        if x.nrows() != data.len() {
            return Err(NnError::InvalidDim(format!("{} rows for {} outcomes", x.nrows(), data.len())));
        }
        Ok(Self { x, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), indices),
            data: self.data.subset(indices),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_c_index: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub params: RiskNet,
    /// One-based epoch whose parameters are returned.
    pub best_epoch: usize,
    pub best_val_c_index: f64,
    pub history: Vec<EpochRecord>,
}

/// Cox partial likelihood over the batch's own risk sets plus
/// `l1_penalty · Σ|w|` over weight matrices, with its gradient.
pub fn batch_objective(
    net: &RiskNet,
    x: ArrayView2<'_, f64>,
    data: &SurvivalData,
    l1_penalty: f64,
    mode: Mode<'_>,
) -> Result<(f64, RiskNet)> {
    let (eta, cache) = net.forward(x, mode)?;
    let eta = eta.to_vec();
    let (cox, d_eta) = cox_loss_and_grad(&eta, data).map_err(|e| match e {
        CoxError::NoEvents => NnError::NoEventsInBatch,
        other => other.into(),
    })?;
    let mut grad = net.backward(&cache, &Array1::from(d_eta));
    let mut penalty = 0.0;
    if l1_penalty != 0.0 {
        for ((kind, theta), (_, g)) in net.tensors().into_iter().zip(grad.tensors_mut()) {
            if kind != TensorKind::Weight {
                continue;
            }
            for (w, g) in theta.iter().zip(g.iter_mut()) {
                penalty += w.abs();
                *g += l1_penalty * if *w > 0.0 { 1.0 } else if *w < 0.0 { -1.0 } else { 0.0 };
            }
        }
    }
    Ok((cox + l1_penalty * penalty, grad))
}

/// One optimiser update on `batch`. Returns the batch loss before the
/// update; a batch without events yields [`NnError::NoEventsInBatch`] and
/// leaves the parameters untouched.
pub fn train_step(
    net: &mut RiskNet,
    adam: &mut Adam,
    batch: &Dataset,
    cfg: &TrainConfig,
    lr: f64,
    dropout: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if batch.data.n_events() == 0 {
        return Err(NnError::NoEventsInBatch);
    }
    let (loss, grad) = batch_objective(net, batch.x.view(), &batch.data, cfg.l1_penalty, Mode::Train { dropout, rng })?;
    adam.step(net, &grad, lr, cfg.weight_decay);
    Ok(loss)
}

struct Trainer<'a> {
    net: RiskNet,
    adam: Adam,
    rng: ChaCha8Rng,
    train: &'a Dataset,
    cfg: &'a TrainConfig,
    dropout: f64,
}

impl<'a> Trainer<'a> {
    fn new(train: &'a Dataset, mlp: &MlpConfig, layout: InputLayout, cfg: &'a TrainConfig) -> Result<Self> {
        mlp.validate()?;
        cfg.validate()?;
        if train.x.ncols() != mlp.input_dim {
            return Err(NnError::DimMismatch {
                expected: mlp.input_dim,
                actual: train.x.ncols(),
            });
        }
        let events = train.data.n_events();
        if events < 2 {
            return Err(NnError::DegenerateTrainSet(events));
        }
        let net = RiskNet::init(mlp, layout)?;
        Ok(Self {
            adam: Adam::new(&net),
            net,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            train,
            cfg,
            dropout: mlp.dropout,
        })
    }

    /// Runs one epoch; `None` if the parameters stopped being finite, in
    /// which case they are rolled back to the start of the epoch.
    fn epoch(&mut self, epoch: usize) -> Result<Option<(f64, f64)>> {
        let lr = lr_schedule(epoch, self.cfg);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let batch_size = if self.cfg.full_batch { order.len() } else { self.cfg.batch_size };
        let snapshot = self.net.clone();
        let mut total = 0.0;
        let mut used = 0usize;
        for idx in order.chunks(batch_size) {
            let batch = self.train.subset(idx);
            match train_step(&mut self.net, &mut self.adam, &batch, self.cfg, lr, self.dropout, &mut self.rng) {
                Ok(loss) => {
                    total += loss;
                    used += 1;
                }
                Err(NnError::NoEventsInBatch) => {}
                Err(NnError::Cox(CoxError::NonFiniteScores)) => {
                    self.net = snapshot;
                    return Ok(None);
                }
                Err(e) => return Err(e),
            }
        }
        if !self.net.is_finite() {
            self.net = snapshot;
            return Ok(None);
        }
        let mean = if used > 0 { total / used as f64 } else { 0.0 };
        Ok(Some((mean, lr)))
    }
}

fn score(net: &RiskNet, val: &Dataset) -> Result<f64> {
    let eta = net.predict(val.x.view())?;
    if eta.iter().any(|v| !v.is_finite()) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(c_index(&val.data, &eta)?)
}

/// Trains for up to `max_epochs`, stopping once validation C-index has not
/// improved for `patience` epochs, and returns the best-validation snapshot.
pub fn train(
    train: &Dataset,
    val: &Dataset,
    mlp: &MlpConfig,
    layout: InputLayout,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    if concordance_counts(&val.data, &vec![0.0; val.len()])?.comparable == 0 {
        return Err(NnError::DegenerateValSet);
    }
    let mut trainer = Trainer::new(train, mlp, layout, cfg)?;
    let mut best = (f64::NEG_INFINITY, trainer.net.clone(), 0usize);
    let mut history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let Some((loss, lr)) = trainer.epoch(epoch)? else {
            break;
        };
        let val_c = score(&trainer.net, val)?;
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss,
            val_c_index: val_c,
            learning_rate: lr,
        });
        if val_c > best.0 + IMPROVEMENT_EPS {
            best = (val_c, trainer.net.clone(), epoch + 1);
        } else if epoch + 1 - best.2 >= cfg.patience {
            break;
        }
    }
    if best.2 == 0 {
        // diverged in the first epoch: fall back to the initial parameters
        best.0 = score(&best.1, val)?;
    }
    Ok(TrainResult {
        params: best.1,
        best_epoch: best.2.max(1).min(cfg.max_epochs),
        best_val_c_index: best.0,
        history,
    })
}

/// Trains for exactly `epochs` epochs (capped at `max_epochs`) on the same
/// schedule as [`train`], without validation.
pub fn fit_epochs(train: &Dataset, mlp: &MlpConfig, layout: InputLayout, cfg: &TrainConfig, epochs: usize) -> Result<RiskNet> {
    let mut trainer = Trainer::new(train, mlp, layout, cfg)?;
    for epoch in 0..epochs.min(cfg.max_epochs) {
        if trainer.epoch(epoch)?.is_none() {
            break;
        }
    }
    Ok(trainer.net)
}
