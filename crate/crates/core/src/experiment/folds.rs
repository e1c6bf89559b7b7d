use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{derive_seed, ExperimentError, Result};
use crate::cohort::SurvivalData;

pub const OUTER_FOLDS: usize = 5;
pub const INNER_FOLDS: usize = 3;
const MIN_PER_STRATUM: usize = 5;

/// Fixed nested fold assignment. All indices are cohort positions, sorted
/// ascending within each fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub outer: Vec<Vec<usize>>,
    /// `inner[f]` partitions the training portion of outer fold `f`.
    pub inner: Vec<Vec<Vec<usize>>>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn n_patients(&self) -> usize {
        self.outer.iter().map(Vec::len).sum()
    }

    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.outer[fold]
    }

    /// Every cohort position outside outer fold `fold`, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .outer
            .iter()
            .enumerate()
            .filter(|&(f, _)| f != fold)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// Outer fold of every cohort position.
    pub fn outer_assignment(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_patients()];
        for (f, idx) in self.outer.iter().enumerate() {
            for &i in idx {
                out[i] = f;
            }
        }
        out
    }

    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("fold plan serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Deals events and non-events separately, round-robin, so every fold holds
/// the floor or ceiling of its share of each stratum.
fn stratified_split(indices: &[usize], events: &[bool], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut pos: Vec<usize> = indices.iter().copied().filter(|&i| events[i]).collect();
    let mut neg: Vec<usize> = indices.iter().copied().filter(|&i| !events[i]).collect();
    pos.shuffle(rng);
    neg.shuffle(rng);
    let mut folds = vec![Vec::new(); k];
    for (j, &i) in pos.iter().chain(&neg).enumerate() {
        folds[j % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

pub fn make_fold_plan(data: &SurvivalData, seed: u64) -> Result<FoldPlan> {
    let events = data.n_events();
    let censored = data.len() - events;
    if events < MIN_PER_STRATUM || censored < MIN_PER_STRATUM {
        return Err(ExperimentError::InfeasibleStratification { events, censored });
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
    let outer = stratified_split(&all, data.events(), OUTER_FOLDS, &mut rng);
    let mut plan = FoldPlan {
        outer,
        inner: Vec::with_capacity(OUTER_FOLDS),
        seed,
    };
    for f in 0..OUTER_FOLDS {
        let train = plan.train_indices(f);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, f as u64]));
        plan.inner.push(stratified_split(&train, data.events(), INNER_FOLDS, &mut rng));
    }
    Ok(plan)
}
