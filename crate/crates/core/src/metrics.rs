//! Censoring-aware discrimination metrics.

use std::cmp::Ordering;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::SurvivalData;

pub const DEFAULT_HORIZON_MONTHS: f64 = 60.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("no positives before the horizon")]
    NoPositives,
    #[error("no negatives past the horizon")]
    NoNegatives,
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {scores} scores for {patients} patients")]
    LengthMismatch { scores: usize, patients: usize },
    #[error("at least 2 repeats are required, got {0}")]
    TooFewRepeats(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation of `per_fold`.
    pub std: f64,
    pub per_fold: Vec<f64>,
}

impl fmt::Display for MetricSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}±{:.3}", self.mean, self.std)
    }
}

pub fn summarize_folds(values: &[f64]) -> Result<MetricSummary, MetricError> {
    if values.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let n = values.len() as f64;
    // shifted by the first value so identical inputs reproduce it exactly
    let pivot = values[0];
    let mean = pivot + values.iter().map(|v| v - pivot).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(MetricSummary {
        mean,
        std: var.sqrt(),
        per_fold: values.to_vec(),
    })
}

fn check_len(data: &SurvivalData, eta: &[f64]) -> Result<(), MetricError> {
    if eta.len() != data.len() {
        return Err(MetricError::LengthMismatch {
            scores: eta.len(),
            patients: data.len(),
        });
    }
    Ok(())
}

fn total_cmp(a: &f64, b: &f64) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// Fenwick tree of counts over score ranks.
struct RankCounts {
    tree: Vec<u64>,
}

impl RankCounts {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted ranks `< rank`.
    fn below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Pair counts behind [`c_index`]: concordant, tied-in-score and comparable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConcordanceCounts {
    pub concordant: u64,
    pub tied: u64,
    pub comparable: u64,
}

impl ConcordanceCounts {
    pub fn value(&self) -> f64 {
        (2 * self.concordant + self.tied) as f64 / (2 * self.comparable) as f64
    }
}

pub fn concordance_counts(data: &SurvivalData, eta: &[f64]) -> Result<ConcordanceCounts, MetricError> {
    check_len(data, eta)?;
    let t = data.times();
    let ev = data.events();
    let n = t.len();

    let mut distinct: Vec<f64> = eta.to_vec();
    distinct.sort_by(total_cmp);
    distinct.dedup();
    let rank = |v: f64| distinct.partition_point(|&d| d < v);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| total_cmp(&t[b], &t[a]));

    let mut later = RankCounts::new(distinct.len());
    let mut inserted = 0u64;
    let mut counts = ConcordanceCounts::default();
    for group in order.chunk_by(|&a, &b| t[a] == t[b]) {
        for &j in group.iter().filter(|&&j| ev[j]) {
            let r = rank(eta[j]);
            let below = later.below(r);
            let at_or_below = later.below(r + 1);
            counts.concordant += below;
            counts.tied += at_or_below - below;
            counts.comparable += inserted;
        }
        for &j in group {
            later.add(rank(eta[j]));
            inserted += 1;
        }
    }
    Ok(counts)
}

/// Harrell's C-index: among pairs with `T_j < T_i` and `δ_j = 1`, the
/// fraction where the earlier failure has the higher score, ties counting
/// one half. Pairs tied in time are not comparable.
pub fn c_index(data: &SurvivalData, eta: &[f64]) -> Result<f64, MetricError> {
    let counts = concordance_counts(data, eta)?;
    if counts.comparable == 0 {
        return Err(MetricError::NoComparablePairs);
    }
    Ok(counts.value())
}

/// Smallest positive gap between distinct scores, if any.
fn min_gap(eta: &[f64]) -> Option<f64> {
    let mut sorted = eta.to_vec();
    sorted.sort_by(total_cmp);
    sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 0.0)
        .min_by(total_cmp)
}

/// C-index with score ties broken uniformly at random, repeated
/// `n_repeats` times. Each repeat adds i.i.d. uniform jitter of magnitude
/// below half the smallest nonzero score gap, which orders every tied group
/// at random and leaves all other pairs untouched.
pub fn c_index_random_ties(
    data: &SurvivalData,
    eta: &[f64],
    n_repeats: usize,
    seed: u64,
) -> Result<MetricSummary, MetricError> {
    if n_repeats < 2 {
        return Err(MetricError::TooFewRepeats(n_repeats));
    }
    c_index(data, eta)?;
    let half_width = 0.45 * min_gap(eta).unwrap_or(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jittered = vec![0.0; eta.len()];
    let mut values = Vec::with_capacity(n_repeats);
    for _ in 0..n_repeats {
        for (out, &v) in jittered.iter_mut().zip(eta) {
            *out = v + half_width * (2.0 * rng.random::<f64>() - 1.0);
        }
        values.push(c_index(data, &jittered)?);
    }
    summarize_folds(&values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HorizonLabel {
    Positive,
    Negative,
    Excluded,
}

/// Positive: event at or before the horizon. Negative: follow-up beyond the
/// horizon, censored or not. Excluded: censored at or before the horizon.
pub fn horizon_label(time: f64, event: bool, horizon: f64) -> HorizonLabel {
    if time > horizon {
        HorizonLabel::Negative
    } else if event {
        HorizonLabel::Positive
    } else {
        HorizonLabel::Excluded
    }
}

pub fn horizon_labels(data: &SurvivalData, horizon: f64) -> Vec<HorizonLabel> {
    data.times()
        .iter()
        .zip(data.events())
        .map(|(&t, &e)| horizon_label(t, e, horizon))
        .collect()
}

/// AUROC for event-by-horizon, ties in score counting one half.
pub fn auroc_horizon(data: &SurvivalData, eta: &[f64], horizon_months: f64) -> Result<f64, MetricError> {
    check_len(data, eta)?;
    let labels = horizon_labels(data, horizon_months);
    let mut neg: Vec<f64> = Vec::new();
    let mut pos: Vec<f64> = Vec::new();
    for (l, &s) in labels.iter().zip(eta) {
        match l {
            HorizonLabel::Positive => pos.push(s),
            HorizonLabel::Negative => neg.push(s),
            HorizonLabel::Excluded => {}
        }
    }
    if pos.is_empty() {
        return Err(MetricError::NoPositives);
    }
    if neg.is_empty() {
        return Err(MetricError::NoNegatives);
    }
    neg.sort_by(total_cmp);
    let mut twice_wins = 0u64;
    for &p in &pos {
        let below = neg.partition_point(|&v| v < p) as u64;
        let at_or_below = neg.partition_point(|&v| v <= p) as u64;
        twice_wins += 2 * below + (at_or_below - below);
    }
    Ok(twice_wins as f64 / (2 * pos.len() * neg.len()) as f64)
}
