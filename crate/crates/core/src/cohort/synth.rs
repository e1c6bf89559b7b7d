//! Synthetic cohorts with a known proportional-hazards structure.
//!
//! Each patient gets i.i.d. standard-normal embeddings per modality and a
//! latent clinical factor. The true log relative risk is linear,
//! `r = Σ_m β_m·x_m + clinical_beta·ξ`, and event times follow a Weibull
//! whose cumulative hazard is `(t/scale)^shape · exp(r)`. Censoring is an
//! independent exponential clock. Because `exp(r)` multiplies the hazard at
//! every `t`, the cohort satisfies proportional hazards exactly.
//!
//! `complementary` controls how much the modalities overlap: at 1.0 every
//! modality is drawn independently; below 1.0 coordinate `k` of each later
//! modality is mixed with coordinate `k` of the first,
//! `x_m[k] = √(1-c)·x_0[k] + √c·z`, so both views see a shared signal while
//! marginals stay standard normal.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Cohort, CohortError, EmbeddingMatrix, PatientRecord, Result, SurvivalOutcome};
use crate::leibovich::{LeibovichFeatures, NStage, TStage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    pub dim: usize,
    /// Leading coefficients; coordinates past `beta.len()` carry no signal.
    #[serde(default)]
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub modalities: Vec<ModalitySpec>,
    pub complementary: f64,
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    pub censoring_rate: f64,
    #[serde(default)]
    pub clinical_beta: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CohortError::InvalidSpec(m));
        if self.n_patients == 0 {
            return bad("n_patients must be at least 1".into());
        }
        if self.modalities.is_empty() {
            return bad("at least one modality is required".into());
        }
        for m in &self.modalities {
            if m.dim == 0 {
                return bad(format!("modality {:?} has dim 0", m.name));
            }
            if m.beta.len() > m.dim {
                return bad(format!("modality {:?} has {} coefficients for dim {}", m.name, m.beta.len(), m.dim));
            }
            if m.beta.iter().any(|b| !b.is_finite()) {
                return bad(format!("modality {:?} has non-finite coefficients", m.name));
            }
        }
        if !(0.0..=1.0).contains(&self.complementary) {
            return bad(format!("complementary must be in [0,1], got {}", self.complementary));
        }
        if !(self.weibull_shape > 0.0 && self.weibull_shape.is_finite()) {
            return bad(format!("weibull_shape must be positive, got {}", self.weibull_shape));
        }
        if !(self.weibull_scale > 0.0 && self.weibull_scale.is_finite()) {
            return bad(format!("weibull_scale must be positive, got {}", self.weibull_scale));
        }
        if !(self.censoring_rate > 0.0 && self.censoring_rate.is_finite()) {
            return bad(format!("censoring_rate must be positive, got {}", self.censoring_rate));
        }
        if !self.clinical_beta.is_finite() {
            return bad("clinical_beta must be finite".into());
        }
        Ok(())
    }

    /// Variance of the true log relative risk implied by the coefficients.
    fn risk_variance(&self) -> f64 {
        let a = (1.0 - self.complementary).sqrt();
        let d0 = self.modalities[0].dim;
        let mut var = self.clinical_beta * self.clinical_beta;
        for (i, mi) in self.modalities.iter().enumerate() {
            var += mi.beta.iter().map(|b| b * b).sum::<f64>();
            for mj in self.modalities.iter().skip(i + 1) {
                let coupling = if i == 0 { a } else { a * a };
                let dot: f64 = mi.beta.iter().zip(&mj.beta).take(d0).map(|(x, y)| x * y).sum();
                var += 2.0 * coupling * dot;
            }
        }
        var.max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub beta: BTreeMap<String, Vec<f64>>,
    pub clinical_beta: f64,
    /// True log relative risk per patient, in cohort order.
    pub risks: Vec<f64>,
}

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn weibull_event_time(u: f64, risk: f64, shape: f64, scale: f64) -> f64 {
    scale * (-u.ln() * (-risk).exp()).powf(1.0 / shape)
}

fn bucket(latent: f64, cuts: &[f64]) -> usize {
    cuts.iter().take_while(|&&c| latent >= c).count()
}

fn clinical_features(xi: f64, rng: &mut ChaCha8Rng) -> LeibovichFeatures {
    let mut noisy = || xi + 0.5 * rng.sample::<f64, _>(StandardNormal);
    let grade = 1 + bucket(noisy(), &[-1.2, 0.1, 1.4]) as u8;
    let t_stage = [TStage::T1a, TStage::T1b, TStage::T2, TStage::T3, TStage::T4][bucket(noisy(), &[-0.3, 0.4, 0.6, 1.9])];
    let size = (1.5 + 0.45 * noisy()).exp();
    let tumor_size_cm = ((size * 10.0).round() / 10.0).max(0.1);
    let nodal = noisy();
    let n_stage = if nodal > 2.2 {
        NStage::N1plus
    } else if rng.random::<f64>() < 0.5 {
        NStage::Nx
    } else {
        NStage::N0
    };
    LeibovichFeatures {
        t_stage,
        n_stage,
        tumor_size_cm,
        grade,
    }
}

pub fn generate_synthetic_cohort(spec: &SyntheticSpec) -> Result<(Cohort, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_patients;
    let a = (1.0 - spec.complementary).sqrt();
    let b = spec.complementary.sqrt();

    let mut values: Vec<Vec<f32>> = spec.modalities.iter().map(|m| Vec::with_capacity(n * m.dim)).collect();
    let mut patients = Vec::with_capacity(n);
    let mut risks = Vec::with_capacity(n);

    for i in 0..n {
        let mut risk = 0.0;
        let d0 = spec.modalities[0].dim;
        let mut first = Vec::with_capacity(d0);
        for (m, ms) in spec.modalities.iter().enumerate() {
            for k in 0..ms.dim {
                let z: f64 = rng.sample(StandardNormal);
                let x = if m > 0 && k < d0 { a * first[k] + b * z } else { z };
                if m == 0 {
                    first.push(x);
                }
                let stored = x as f32;
                values[m].push(stored);
                if let Some(beta) = ms.beta.get(k) {
                    risk += beta * f64::from(stored);
                }
            }
        }
        let xi: f64 = rng.sample(StandardNormal);
        risk += spec.clinical_beta * xi;
        let event_time = weibull_event_time(open_unit(&mut rng), risk, spec.weibull_shape, spec.weibull_scale);
        let censor_time = -open_unit(&mut rng).ln() / spec.censoring_rate;
        let leibovich = clinical_features(xi, &mut rng);

        let event = event_time <= censor_time;
        let time = if event { event_time } else { censor_time };
        let outcome = SurvivalOutcome::new(time.max(f64::MIN_POSITIVE), event)?;
        patients.push(PatientRecord {
            patient_id: format!("S{:04}", i + 1),
            outcome,
            embeddings: spec.modalities.iter().map(|m| (m.name.clone(), i)).collect(),
            leibovich: Some(leibovich),
        });
        risks.push(risk);
    }

    let mut matrices = BTreeMap::new();
    for (ms, vals) in spec.modalities.iter().zip(values) {
        matrices.insert(ms.name.clone(), EmbeddingMatrix::new(ms.name.clone(), n, ms.dim, vals)?);
    }
    let truth = GroundTruth {
        beta: spec.modalities.iter().map(|m| (m.name.clone(), m.beta.clone())).collect(),
        clinical_beta: spec.clinical_beta,
        risks,
    };
    Ok((Cohort::new(patients, matrices)?, truth))
}

/// Censoring rate giving an expected event fraction of `target` under
/// `spec`'s hazard. Uses a fixed Monte-Carlo sample of risks and clocks, over
/// which the event fraction is monotone in the rate, then bisects.
pub fn calibrate_censoring_rate(spec: &SyntheticSpec, target: f64) -> Result<f64> {
    let mut probe = spec.clone();
    probe.censoring_rate = 1.0;
    probe.validate()?;
    if !(target > 0.0 && target < 1.0) {
        return Err(CohortError::InvalidSpec(format!("target event fraction must be in (0,1), got {target}")));
    }
    const SAMPLES: usize = 50_000;
    let sd = spec.risk_variance().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_ca11);
    // event iff rate <= -ln(V) / T
    let thresholds: Vec<f64> = (0..SAMPLES)
        .map(|_| {
            let r = sd * rng.sample::<f64, _>(StandardNormal);
            let t = weibull_event_time(open_unit(&mut rng), r, spec.weibull_shape, spec.weibull_scale);
            -open_unit(&mut rng).ln() / t
        })
        .collect();
    let fraction = |rate: f64| thresholds.iter().filter(|&&th| rate <= th).count() as f64 / SAMPLES as f64;
    let (mut lo, mut hi) = (-30.0f64, 30.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fraction(mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}
