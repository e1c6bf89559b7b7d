use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, ExperimentError, Result};
use crate::fusion::DEFAULT_ALPHA_STEP;
use crate::nn::{
    train, Dataset, InputLayout, MlpConfig, NnError, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_MAX_EPOCHS,
    DEFAULT_PATIENCE, DEFAULT_WARMUP_EPOCHS, DROPOUT_RANGE, HIDDEN_RANGE, L1_RANGE, LEARNING_RATE_RANGE,
    LR_FLOOR_RANGE, WEIGHT_DECAY_RANGE,
};

pub const DEFAULT_BUDGET: usize = 50;

/// Closed ranges sampled by the search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub weight_decay: (f64, f64),
    pub l1_penalty: (f64, f64),
    pub lr_floor: (f64, f64),
    pub hidden_dim: (usize, usize),
    pub dropout: (f64, f64),
}

pub const SEARCH_SPACE: SearchSpace = SearchSpace {
    learning_rate: LEARNING_RATE_RANGE,
    weight_decay: WEIGHT_DECAY_RANGE,
    l1_penalty: L1_RANGE,
    lr_floor: LR_FLOOR_RANGE,
    hidden_dim: HIDDEN_RANGE,
    dropout: DROPOUT_RANGE,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpec {
    /// Trials per outer fold and model.
    pub budget: usize,
    /// Late-fusion α grid step.
    pub alpha_step: f64,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub full_batch: bool,
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            alpha_step: DEFAULT_ALPHA_STEP,
            seed: 0,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            batch_size: DEFAULT_BATCH_SIZE,
            warmup_epochs: DEFAULT_WARMUP_EPOCHS,
            full_batch: false,
        }
    }
}

impl SearchSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ExperimentError::InvalidSearchSpec(m.to_string()));
        if self.budget == 0 {
            return bad("budget must be at least 1");
        }
        if !(self.alpha_step > 0.0 && self.alpha_step <= 1.0) {
            return bad("alpha_step must lie in (0, 1]");
        }
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return bad("max_epochs, patience and batch_size must be positive");
        }
        Ok(())
    }
}

/// One sampled hyperparameter configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub l1_penalty: f64,
    pub lr_floor: f64,
    pub hidden_dim: usize,
    pub dropout: f64,
}

impl TrialConfig {
    pub fn train_config(&self, spec: &SearchSpec, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            l1_penalty: self.l1_penalty,
            lr_floor: self.lr_floor,
            max_epochs: spec.max_epochs,
            patience: spec.patience,
            batch_size: spec.batch_size,
            warmup_epochs: spec.warmup_epochs,
            full_batch: spec.full_batch,
            seed,
        }
    }

    pub fn mlp_config(&self, input_dim: usize, seed: u64) -> MlpConfig {
        MlpConfig {
            input_dim,
            hidden_dim: self.hidden_dim,
            dropout: self.dropout,
            seed,
        }
    }
}

/// Proposes the configuration for a trial. Implementations must be pure in
/// `(trial, seed)` so trials can run in any order.
pub trait TrialSampler: Sync {
    fn sample(&self, trial: usize, seed: u64) -> TrialConfig;
}

/// Independent draws: log-uniform rates and penalties, uniform integer
/// hidden width, uniform dropout.
#[derive(Debug, Clone, Copy)]
pub struct RandomSearch(pub SearchSpace);

impl Default for RandomSearch {
    fn default() -> Self {
        Self(SEARCH_SPACE)
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo.ln()..=hi.ln()).exp().clamp(lo, hi)
}

impl TrialSampler for RandomSearch {
    fn sample(&self, trial: usize, seed: u64) -> TrialConfig {
        let s = &self.0;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[trial as u64]));
        TrialConfig {
            learning_rate: log_uniform(&mut rng, s.learning_rate),
            weight_decay: log_uniform(&mut rng, s.weight_decay),
            l1_penalty: log_uniform(&mut rng, s.l1_penalty),
            lr_floor: log_uniform(&mut rng, s.lr_floor),
            hidden_dim: rng.random_range(s.hidden_dim.0..=s.hidden_dim.1),
            dropout: rng.random_range(s.dropout.0..=s.dropout.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerRecord {
    pub best_epoch: usize,
    pub val_c_index: f64,
    /// Predictions on the inner validation fold from the best snapshot, in
    /// the fold's index order.
    pub val_predictions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub config: TrialConfig,
    pub mean_val_c_index: f64,
    pub inner: Vec<InnerRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best_trial: usize,
    pub trials: Vec<TrialRecord>,
}

impl SearchOutcome {
    pub fn best(&self) -> &TrialRecord {
        &self.trials[self.best_trial]
    }
}

/// Index of the highest score; the earliest wins ties.
pub fn select_best_trial(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Median of the inner best epochs, rounded half away from zero and clamped
/// to `[1, 200]`.
pub fn select_epochs(best_epochs: &[usize]) -> Result<usize> {
    if best_epochs.is_empty() {
        return Err(ExperimentError::MissingInnerRecords);
    }
    let mut v = best_epochs.to_vec();
    v.sort_unstable();
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    };
    Ok((median.round() as usize).clamp(1, DEFAULT_MAX_EPOCHS))
}

fn complement(n: usize, held_out: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in held_out {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

fn run_trial(
    train_set: &Dataset,
    inner_folds: &[Vec<usize>],
    layout: InputLayout,
    spec: &SearchSpec,
    config: TrialConfig,
    trial: usize,
    seed: u64,
) -> Result<TrialRecord> {
    let mut inner = Vec::with_capacity(inner_folds.len());
    for (j, val_idx) in inner_folds.iter().enumerate() {
        let fit = train_set.subset(&complement(train_set.len(), val_idx));
        let val = train_set.subset(val_idx);
        let mlp = config.mlp_config(train_set.x.ncols(), derive_seed(seed, &[trial as u64, j as u64, 0]));
        let cfg = config.train_config(spec, derive_seed(seed, &[trial as u64, j as u64, 1]));
        let result = train(&fit, &val, &mlp, layout, &cfg).map_err(|e| match e {
            NnError::DegenerateTrainSet(_) | NnError::DegenerateValSet => ExperimentError::DegenerateInnerFold {
                fold: usize::MAX,
                inner: j,
                reason: e.to_string(),
            },
            other => other.into(),
        })?;
        let val_predictions = result.params.predict(val.x.view())?;
        inner.push(InnerRecord {
            best_epoch: result.best_epoch,
            val_c_index: result.best_val_c_index,
            val_predictions,
        });
    }
    let mean_val_c_index = inner.iter().map(|r| r.val_c_index).sum::<f64>() / inner.len() as f64;
    Ok(TrialRecord {
        config,
        mean_val_c_index,
        inner,
    })
}

/// Runs `spec.budget` trials proposed by `sampler`, each trained on every
/// inner split of `train_set` (inner folds are positions into it), and
/// keeps the one with the best mean inner-validation C-index.
pub fn search_with(
    sampler: &dyn TrialSampler,
    train_set: &Dataset,
    inner_folds: &[Vec<usize>],
    layout: InputLayout,
    spec: &SearchSpec,
    seed: u64,
) -> Result<SearchOutcome> {
    spec.validate()?;
    if inner_folds.is_empty() {
        return Err(ExperimentError::MissingInnerRecords);
    }
    let trials = (0..spec.budget)
        .into_par_iter()
        .map(|t| run_trial(train_set, inner_folds, layout, spec, sampler.sample(t, seed), t, seed))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = trials.iter().map(|t| t.mean_val_c_index).collect();
    let best_trial = select_best_trial(&scores).ok_or(ExperimentError::MissingInnerRecords)?;
    Ok(SearchOutcome { best_trial, trials })
}

pub fn search_hyperparameters(
    train_set: &Dataset,
    inner_folds: &[Vec<usize>],
    layout: InputLayout,
    spec: &SearchSpec,
    seed: u64,
) -> Result<SearchOutcome> {
    search_with(&RandomSearch::default(), train_set, inner_folds, layout, spec, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::SurvivalData;
    use ndarray::Array2;

    #[test]
    fn samples_stay_in_range() {
        let s = RandomSearch::default();
        for t in 0..1000 {
            let c = s.sample(t, 42);
            assert!((1e-5..=1e-3).contains(&c.learning_rate));
            assert!((1e-6..=1e-2).contains(&c.weight_decay));
            assert!((1e-6..=1e-2).contains(&c.l1_penalty));
            assert!((1e-6..=1e-2).contains(&c.lr_floor));
            assert!((32..=512).contains(&c.hidden_dim));
            assert!((0.0..=0.5).contains(&c.dropout));
        }
        assert_eq!(s.sample(3, 9), s.sample(3, 9));
        assert_ne!(s.sample(3, 9), s.sample(4, 9));
    }

    #[test]
    fn log_uniform_spreads_over_decades() {
        let s = RandomSearch::default();
        let below = (0..2000).filter(|&t| s.sample(t, 1).weight_decay < 1e-4).count();
        // half the log-range lies below 1e-4
        assert!((800..1200).contains(&below), "{below}");
    }

    #[test]
    fn epoch_rule() {
        assert_eq!(select_epochs(&[40, 50, 90]).unwrap(), 50);
        assert_eq!(select_epochs(&[10, 10, 10]).unwrap(), 10);
        assert_eq!(select_epochs(&[1, 200, 200]).unwrap(), 200);
        assert_eq!(select_epochs(&[250, 300, 400]).unwrap(), 200);
        assert_eq!(select_epochs(&[0, 0, 5]).unwrap(), 1);
        assert_eq!(select_epochs(&[3, 4]).unwrap(), 4);
        assert!(matches!(select_epochs(&[]), Err(ExperimentError::MissingInnerRecords)));
    }

    #[test]
    fn argmax_prefers_earlier_trial() {
        assert_eq!(select_best_trial(&[0.6, 0.7, 0.7, 0.65]), Some(1));
        assert_eq!(select_best_trial(&[0.9, 0.5]), Some(0));
        assert_eq!(select_best_trial(&[]), None);
    }

    fn toy(n: usize) -> Dataset {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 31 + j * 17) % 13) as f64 / 6.0 - 1.0);
        let times = (0..n).map(|i| 1.0 + 10.0 * (2.0 - x[[i, 0]]) + (i % 5) as f64).collect();
        let events = (0..n).map(|i| i % 4 != 0).collect();
        Dataset::new(x, SurvivalData::new(times, events).unwrap()).unwrap()
    }

    fn quick() -> SearchSpec {
        SearchSpec {
            budget: 1,
            max_epochs: 15,
            patience: 5,
            warmup_epochs: 3,
            ..SearchSpec::default()
        }
    }

    #[test]
    fn single_trial_budget_returns_the_sample() {
        let d = toy(36);
        let folds: Vec<Vec<usize>> = (0..3).map(|k| (0..36).filter(|i| i % 3 == k).collect()).collect();
        let out = search_hyperparameters(&d, &folds, InputLayout::Direct, &quick(), 5).unwrap();
        assert_eq!(out.best_trial, 0);
        assert_eq!(out.best().config, RandomSearch::default().sample(0, 5));
        assert_eq!(out.best().inner.len(), 3);
        assert_eq!(out.best().inner[1].val_predictions.len(), 12);
    }

    #[test]
    fn search_is_deterministic() {
        let d = toy(36);
        let folds: Vec<Vec<usize>> = (0..3).map(|k| (0..36).filter(|i| i % 3 == k).collect()).collect();
        let spec = SearchSpec { budget: 3, ..quick() };
        let a = search_hyperparameters(&d, &folds, InputLayout::Direct, &spec, 5).unwrap();
        let b = search_hyperparameters(&d, &folds, InputLayout::Direct, &spec, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_inner_fold_is_reported() {
        let mut d = toy(12);
        d.data = SurvivalData::new(d.data.times().to_vec(), vec![false; 12]).unwrap();
        let folds: Vec<Vec<usize>> = (0..3).map(|k| (0..12).filter(|i| i % 3 == k).collect()).collect();
        let err = search_hyperparameters(&d, &folds, InputLayout::Direct, &quick(), 0).unwrap_err();
        assert!(matches!(err, ExperimentError::DegenerateInnerFold { inner: 0, .. }));
    }
}
