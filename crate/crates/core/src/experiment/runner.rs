use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;

use super::{
    derive_seed, search_hyperparameters, select_epochs, ExperimentError, FoldPlan, ModelKind, Result, SearchOutcome,
    SearchSpec, Strategy, TrialConfig,
};
use crate::cohort::{Cohort, SurvivalData, WSI};
use crate::fusion::{late_fuse, tune_alpha_splits, FusionSplit};
use crate::leibovich::{leibovich_cohort_scores, PointTable};
use crate::metrics::{
    auroc_horizon, c_index, c_index_random_ties, summarize_folds, MetricError, MetricSummary, DEFAULT_HORIZON_MONTHS,
};
use crate::nn::{fit_epochs, Checkpoint, Dataset};

pub const DEFAULT_TIE_REPEATS: usize = 1000;
const REFIT: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub search: SearchSpec,
    pub horizon_months: f64,
    /// Repeats of random tie-breaking for `leibovich_rt`.
    pub tie_repeats: usize,
    pub tie_seed: u64,
    pub point_table: PointTable,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            search: SearchSpec::default(),
            horizon_months: DEFAULT_HORIZON_MONTHS,
            tie_repeats: DEFAULT_TIE_REPEATS,
            tie_seed: 0,
            point_table: PointTable::default(),
        }
    }
}

/// Everything recorded for one strategy on one outer fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    pub c_index: f64,
    /// `None` when the test fold has no positives or no negatives at the
    /// horizon.
    pub auroc: Option<f64>,
    pub alpha: Option<f64>,
    /// Keyed by model name.
    pub epochs: BTreeMap<String, usize>,
    pub trial_config: BTreeMap<String, TrialConfig>,
    pub seeds: BTreeMap<String, u64>,
    /// Every patient seen by training, tuning or selection in this fold.
    pub train_ids: Vec<String>,
    /// Scored outer-test patients, in prediction order.
    pub test_ids: Vec<String>,
    pub test_predictions: Vec<f64>,
    pub models: BTreeMap<String, Checkpoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyResult {
    pub strategy: Strategy,
    pub folds: Vec<FoldOutcome>,
    pub c_index: MetricSummary,
    /// Over folds where the horizon AUROC is defined.
    pub auroc: Option<MetricSummary>,
}

impl StrategyResult {
    fn from_folds(strategy: Strategy, folds: Vec<FoldOutcome>) -> Result<Self> {
        let c = summarize_folds(&folds.iter().map(|f| f.c_index).collect::<Vec<_>>())?;
        let defined: Vec<f64> = folds.iter().filter_map(|f| f.auroc).collect();
        let auroc = if defined.is_empty() {
            None
        } else {
            Some(summarize_folds(&defined)?)
        };
        Ok(Self {
            strategy,
            folds,
            c_index: c,
            auroc,
        })
    }
}

/// Fails if any outer-test patient appears among the fold's training ids.
pub fn verify_no_leakage(outcome: &FoldOutcome) -> Result<()> {
    let train: BTreeSet<&str> = outcome.train_ids.iter().map(String::as_str).collect();
    match outcome.test_ids.iter().find(|id| train.contains(id.as_str())) {
        Some(id) => Err(ExperimentError::Leakage {
            fold: outcome.fold,
            patient: id.clone(),
        }),
        None => Ok(()),
    }
}

/// A model searched, refitted and applied on one outer fold.
struct ModelFit {
    search: SearchOutcome,
    epochs: usize,
    init_seed: u64,
    train_seed: u64,
    search_seed: u64,
    checkpoint: Checkpoint,
    test_predictions: Vec<f64>,
    train_ids: Vec<String>,
}

fn ids(cohort: &Cohort, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| cohort.patients()[i].patient_id.clone()).collect()
}

fn check_modalities(cohort: &Cohort, strategy: Strategy) -> Result<()> {
    for kind in strategy.models() {
        for m in kind.modalities() {
            if cohort.matrix(m).is_none() {
                return Err(ExperimentError::MissingModality(m.to_string()));
            }
        }
    }
    Ok(())
}

fn outer_metric(fold: usize, r: std::result::Result<f64, MetricError>) -> Result<f64> {
    r.map_err(|e| match e {
        MetricError::NoComparablePairs => ExperimentError::DegenerateOuterFold {
            fold,
            reason: e.to_string(),
        },
        other => other.into(),
    })
}

fn optional_auroc(data: &SurvivalData, eta: &[f64], horizon: f64) -> Result<Option<f64>> {
    match auroc_horizon(data, eta, horizon) {
        Ok(v) => Ok(Some(v)),
        Err(MetricError::NoPositives | MetricError::NoNegatives) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn fit_model(cohort: &Cohort, kind: ModelKind, plan: &FoldPlan, fold: usize, cfg: &ExperimentConfig) -> Result<ModelFit> {
    let surv = cohort.survival_data();
    let train_idx = plan.train_indices(fold);
    let test_idx = plan.test_indices(fold);
    let mods = kind.modalities();
    let train_set = Dataset::new(cohort.features(mods, &train_idx)?, surv.subset(&train_idx))?;
    let position: HashMap<usize, usize> = train_idx.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let inner: Vec<Vec<usize>> = plan.inner[fold]
        .iter()
        .map(|f| f.iter().map(|i| position[i]).collect())
        .collect();
    let wsi_dim = cohort.modality_dim(WSI).unwrap_or(0);
    let layout = kind.layout(wsi_dim);

    let search_seed = derive_seed(cfg.search.seed, &[kind.tag(), fold as u64]);
    let search = search_hyperparameters(&train_set, &inner, layout, &cfg.search, search_seed).map_err(|e| match e {
        ExperimentError::DegenerateInnerFold { inner, reason, .. } => {
            ExperimentError::DegenerateInnerFold { fold, inner, reason }
        }
        other => other,
    })?;
    let best = search.best();
    let epochs = select_epochs(&best.inner.iter().map(|r| r.best_epoch).collect::<Vec<_>>())?;

    let init_seed = derive_seed(search_seed, &[REFIT, 0]);
    let train_seed = derive_seed(search_seed, &[REFIT, 1]);
    let mlp = best.config.mlp_config(train_set.x.ncols(), init_seed);
    let train_cfg = best.config.train_config(&cfg.search, train_seed);
    let net = fit_epochs(&train_set, &mlp, layout, &train_cfg, epochs)?;
    let test_x = cohort.features(mods, test_idx)?;
    let test_predictions = net.predict(test_x.view())?;
    Ok(ModelFit {
        epochs,
        init_seed,
        train_seed,
        search_seed,
        checkpoint: Checkpoint {
            config: mlp,
            modalities: mods.iter().map(|m| m.to_string()).collect(),
            net,
        },
        test_predictions,
        train_ids: ids(cohort, &train_idx),
        search,
    })
}

fn learned_outcome(
    strategy: Strategy,
    cohort: &Cohort,
    plan: &FoldPlan,
    fold: usize,
    fits: &BTreeMap<ModelKind, &ModelFit>,
    cfg: &ExperimentConfig,
) -> Result<FoldOutcome> {
    let surv = cohort.survival_data();
    let test_idx = plan.test_indices(fold);
    let test_data = surv.subset(test_idx);
    let mut outcome = FoldOutcome {
        fold,
        c_index: 0.0,
        auroc: None,
        alpha: None,
        epochs: BTreeMap::new(),
        trial_config: BTreeMap::new(),
        seeds: BTreeMap::new(),
        train_ids: Vec::new(),
        test_ids: ids(cohort, test_idx),
        test_predictions: Vec::new(),
        models: BTreeMap::new(),
    };
    let mut train_ids = BTreeSet::new();
    for (kind, fit) in fits {
        let name = kind.name().to_string();
        outcome.epochs.insert(name.clone(), fit.epochs);
        outcome.trial_config.insert(name.clone(), fit.search.best().config);
        outcome.seeds.insert(format!("{name}_search"), fit.search_seed);
        outcome.seeds.insert(format!("{name}_init"), fit.init_seed);
        outcome.seeds.insert(format!("{name}_train"), fit.train_seed);
        outcome.models.insert(name, fit.checkpoint.clone());
        train_ids.extend(fit.train_ids.iter().cloned());
    }
    outcome.train_ids = train_ids.into_iter().collect();

    outcome.test_predictions = if strategy == Strategy::Late {
        let (wsi, ct) = (fits[&ModelKind::Wsi], fits[&ModelKind::Ct]);
        let train_idx = plan.train_indices(fold);
        let position: HashMap<usize, usize> = train_idx.iter().enumerate().map(|(p, &i)| (i, p)).collect();
        let train_data = surv.subset(&train_idx);
        let val_data: Vec<SurvivalData> = plan.inner[fold]
            .iter()
            .map(|f| train_data.subset(&f.iter().map(|i| position[i]).collect::<Vec<_>>()))
            .collect();
        let splits: Vec<FusionSplit<'_>> = val_data
            .iter()
            .zip(wsi.search.best().inner.iter().zip(&ct.search.best().inner))
            .map(|(data, (w, c))| FusionSplit {
                r_wsi: &w.val_predictions,
                r_ct: &c.val_predictions,
                data,
            })
            .collect();
        let alpha = tune_alpha_splits(&splits, cfg.search.alpha_step)?;
        outcome.alpha = Some(alpha.alpha());
        late_fuse(&wsi.test_predictions, &ct.test_predictions, alpha)?
    } else {
        let (_, fit) = fits.iter().next().expect("learned strategy has one model");
        fit.test_predictions.clone()
    };
    outcome.c_index = outer_metric(fold, c_index(&test_data, &outcome.test_predictions))?;
    outcome.auroc = optional_auroc(&test_data, &outcome.test_predictions, cfg.horizon_months)?;
    Ok(outcome)
}

fn clinical_outcome(
    strategy: Strategy,
    cohort: &Cohort,
    plan: &FoldPlan,
    fold: usize,
    cfg: &ExperimentConfig,
) -> Result<FoldOutcome> {
    let scores = leibovich_cohort_scores(cohort, &cfg.point_table)?.by_position(cohort.len());
    let surv = cohort.survival_data();
    let scored: Vec<(usize, f64)> = plan
        .test_indices(fold)
        .iter()
        .filter_map(|&i| scores[i].map(|s| (i, s)))
        .collect();
    let idx: Vec<usize> = scored.iter().map(|&(i, _)| i).collect();
    let eta: Vec<f64> = scored.iter().map(|&(_, s)| s).collect();
    let data = surv.subset(&idx);
    let mut seeds = BTreeMap::new();
    let c = if strategy == Strategy::LeibovichRt {
        let seed = derive_seed(cfg.tie_seed, &[fold as u64]);
        seeds.insert("tie_break".to_string(), seed);
        outer_metric(fold, c_index_random_ties(&data, &eta, cfg.tie_repeats, seed).map(|s| s.mean))?
    } else {
        outer_metric(fold, c_index(&data, &eta))?
    };
    Ok(FoldOutcome {
        fold,
        c_index: c,
        auroc: optional_auroc(&data, &eta, cfg.horizon_months)?,
        alpha: None,
        epochs: BTreeMap::new(),
        trial_config: BTreeMap::new(),
        seeds,
        train_ids: Vec::new(),
        test_ids: ids(cohort, &idx),
        test_predictions: eta,
        models: BTreeMap::new(),
    })
}

fn validate(cohort: &Cohort, plan: &FoldPlan, cfg: &ExperimentConfig) -> Result<()> {
    cfg.search.validate()?;
    if plan.n_patients() != cohort.len() {
        return Err(ExperimentError::InvalidSearchSpec(format!(
            "fold plan covers {} patients, cohort has {}",
            plan.n_patients(),
            cohort.len()
        )));
    }
    if !(cfg.horizon_months.is_finite() && cfg.horizon_months > 0.0) {
        return Err(ExperimentError::InvalidSearchSpec("horizon_months must be positive".into()));
    }
    Ok(())
}

/// Evaluates `strategies` on every outer fold of `plan`. Models shared
/// between strategies (the unimodal models behind late fusion) are fitted
/// once. Results come back in strategy order, deduplicated.
pub fn run_experiment(
    cohort: &Cohort,
    strategies: &[Strategy],
    plan: &FoldPlan,
    cfg: &ExperimentConfig,
) -> Result<Vec<StrategyResult>> {
    validate(cohort, plan, cfg)?;
    let strategies: BTreeSet<Strategy> = strategies.iter().copied().collect();
    for &s in &strategies {
        check_modalities(cohort, s)?;
    }
    let kinds: BTreeSet<ModelKind> = strategies.iter().flat_map(|s| s.models().iter().copied()).collect();
    let n_folds = plan.outer.len();
    let tasks: Vec<(ModelKind, usize)> = kinds.iter().flat_map(|&k| (0..n_folds).map(move |f| (k, f))).collect();
    let fitted = tasks
        .par_iter()
        .map(|&(k, f)| fit_model(cohort, k, plan, f, cfg))
        .collect::<Result<Vec<_>>>()?;
    let fits: BTreeMap<(ModelKind, usize), ModelFit> = tasks.into_iter().zip(fitted).collect();

    let mut results = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let mut folds = Vec::with_capacity(n_folds);
        for f in 0..n_folds {
            let outcome = if strategy.is_learned() {
                let used: BTreeMap<ModelKind, &ModelFit> =
                    strategy.models().iter().map(|&k| (k, &fits[&(k, f)])).collect();
                learned_outcome(strategy, cohort, plan, f, &used, cfg)?
            } else {
                clinical_outcome(strategy, cohort, plan, f, cfg)?
            };
            verify_no_leakage(&outcome)?;
            folds.push(outcome);
        }
        results.push(StrategyResult::from_folds(strategy, folds)?);
    }
    Ok(results)
}

pub fn run_strategy(cohort: &Cohort, strategy: Strategy, plan: &FoldPlan, cfg: &ExperimentConfig) -> Result<StrategyResult> {
    let mut out = run_experiment(cohort, &[strategy], plan, cfg)?;
    Ok(out.remove(0))
}
