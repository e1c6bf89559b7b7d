//! Brute-force references, written without reference to the crate's sweeps.

use std::cmp::Ordering;

/// Breslow Cox loss by direct enumeration of each event's risk set.
pub fn cox_loss(eta: &[f64], t: &[f64], e: &[bool]) -> f64 {
    let mut loss = 0.0;
    for i in 0..eta.len() {
        if !e[i] {
            continue;
        }
        let members: Vec<f64> = (0..eta.len()).filter(|&j| t[j] >= t[i]).map(|j| eta[j]).collect();
        let m = members.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + members.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - eta[i];
    }
    loss
}

/// Harrell pair enumeration: `(score, comparable)` with ties worth one half.
pub fn concordance(eta: &[f64], t: &[f64], e: &[bool]) -> (f64, usize) {
    let mut score = 0.0;
    let mut comparable = 0;
    for i in 0..eta.len() {
        for j in 0..eta.len() {
            if e[i] && t[i] < t[j] {
                comparable += 1;
                score += match eta[i].partial_cmp(&eta[j]).unwrap() {
                    Ordering::Greater => 1.0,
                    Ordering::Equal => 0.5,
                    Ordering::Less => 0.0,
                };
            }
        }
    }
    (score, comparable)
}

pub fn c_index(eta: &[f64], t: &[f64], e: &[bool]) -> Option<f64> {
    let (s, n) = concordance(eta, t, e);
    (n > 0).then(|| s / n as f64)
}

/// Horizon AUROC over every positive/negative pair. Censored at or before
/// the horizon is neither class.
pub fn auroc(eta: &[f64], t: &[f64], e: &[bool], horizon: f64) -> Option<f64> {
    let pos: Vec<f64> = (0..eta.len()).filter(|&i| e[i] && t[i] <= horizon).map(|i| eta[i]).collect();
    let neg: Vec<f64> = (0..eta.len()).filter(|&i| t[i] > horizon).map(|i| eta[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in &pos {
        for q in &neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

/// Expected C-index when every group of tied scores is put in a uniformly
/// random order, by enumerating all permutations of the patients. Scores
/// must be integer-valued.
pub fn expected_c_index_random_ties(eta: &[f64], t: &[f64], e: &[bool]) -> f64 {
    let n = eta.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    loop {
        // position in `perm` breaks ties among equal scores
        let mut pos = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            pos[p] = k;
        }
        let broken: Vec<f64> = (0..n).map(|i| eta[i] * (n as f64 + 1.0) + pos[i] as f64).collect();
        total += c_index(&broken, t, e).unwrap();
        count += 1;
        if !next_permutation(&mut perm) {
            break;
        }
    }
    total / count as f64
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}
