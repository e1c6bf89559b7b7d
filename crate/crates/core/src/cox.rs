//! Cox partial likelihood over risk scores.
//!
//! Tied event times use the Breslow convention: every event at time `t`
//! shares the full risk set `{j : T_j >= t}`, and a patient censored at `t`
//! is still at risk for events at `t`. Loss and gradient are computed in
//! O(N log N) by sweeping the nested risk sets in time order with a running
//! log-sum-exp; [`risk_sets`] materialises the sets explicitly.

use std::cmp::Ordering;

use thiserror::Error;

use crate::cohort::SurvivalData;

#[derive(Debug, Error, PartialEq)]
pub enum CoxError {
    #[error("no observed events")]
    NoEvents,
    #[error("length mismatch: {scores} scores for {patients} patients")]
    LengthMismatch { scores: usize, patients: usize },
    #[error("risk scores must be finite")]
    NonFiniteScores,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RiskSet {
    pub event_index: usize,
    /// Ascending patient indices with `T_j >= T_event`.
    pub members: Vec<usize>,
}

pub fn risk_sets(data: &SurvivalData) -> Result<Vec<RiskSet>, CoxError> {
    if data.n_events() == 0 {
        return Err(CoxError::NoEvents);
    }
    let t = data.times();
    Ok(data
        .events()
        .iter()
        .enumerate()
        .filter(|(_, &e)| e)
        .map(|(i, _)| RiskSet {
            event_index: i,
            members: (0..t.len()).filter(|&j| t[j] >= t[i]).collect(),
        })
        .collect())
}

fn check(eta: &[f64], data: &SurvivalData) -> Result<(), CoxError> {
    if eta.len() != data.len() {
        return Err(CoxError::LengthMismatch {
            scores: eta.len(),
            patients: data.len(),
        });
    }
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(CoxError::NonFiniteScores);
    }
    if data.n_events() == 0 {
        return Err(CoxError::NoEvents);
    }
    Ok(())
}

/// Index ranges of equal-time groups over `order` (sorted by time).
fn time_groups<'a>(order: &'a [usize], t: &'a [f64]) -> impl Iterator<Item = &'a [usize]> + 'a {
    order.chunk_by(move |&a, &b| t[a] == t[b])
}

#[derive(Default, Clone, Copy)]
struct LogSumExp {
    max: f64,
    scaled: f64,
}

impl LogSumExp {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }

    fn push(&mut self, v: f64) {
        if v > self.max {
            self.scaled = self.scaled * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.scaled += (v - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        self.max + self.scaled.ln()
    }
}

fn sorted_by_time(t: &[f64], descending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&a, &b| {
        let o = t[a].partial_cmp(&t[b]).unwrap_or(Ordering::Equal);
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    order
}

/// `log Σ_{j∈R(T_i)} exp(η_j)` for every event `i`, indexed by patient.
fn risk_set_lse(eta: &[f64], data: &SurvivalData) -> Vec<f64> {
    let t = data.times();
    let ev = data.events();
    let order = sorted_by_time(t, true);
    let mut lse = vec![f64::NAN; t.len()];
    let mut acc = LogSumExp::new();
    for group in time_groups(&order, t) {
        for &j in group {
            acc.push(eta[j]);
        }
        let v = acc.value();
        for &i in group.iter().filter(|&&i| ev[i]) {
            lse[i] = v;
        }
    }
    lse
}

/// Negative Cox log partial likelihood.
pub fn cox_loss(eta: &[f64], data: &SurvivalData) -> Result<f64, CoxError> {
    check(eta, data)?;
    let lse = risk_set_lse(eta, data);
    Ok(data
        .events()
        .iter()
        .enumerate()
        .filter(|(_, &e)| e)
        .map(|(i, _)| lse[i] - eta[i])
        .sum())
}

/// Gradient of [`cox_loss`] with respect to each risk score.
pub fn cox_loss_grad(eta: &[f64], data: &SurvivalData) -> Result<Vec<f64>, CoxError> {
    Ok(cox_loss_and_grad(eta, data)?.1)
}

pub fn cox_loss_and_grad(eta: &[f64], data: &SurvivalData) -> Result<(f64, Vec<f64>), CoxError> {
    check(eta, data)?;
    let t = data.times();
    let ev = data.events();
    let lse = risk_set_lse(eta, data);
    let loss = (0..t.len()).filter(|&i| ev[i]).map(|i| lse[i] - eta[i]).sum();

    // patient k receives Σ_{events i with T_i <= T_k} exp(η_k - lse_i)
    let order = sorted_by_time(t, false);
    let mut grad = vec![0.0; t.len()];
    let mut acc = LogSumExp::new();
    for group in time_groups(&order, t) {
        for &i in group.iter().filter(|&&i| ev[i]) {
            acc.push(-lse[i]);
        }
        if acc.max == f64::NEG_INFINITY {
            continue;
        }
        let c = acc.value();
        for &k in group {
            grad[k] = (eta[k] + c).exp();
        }
    }
    for k in 0..t.len() {
        if ev[k] {
            grad[k] -= 1.0;
        }
    }
    Ok((loss, grad))
}
