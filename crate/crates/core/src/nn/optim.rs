use std::f64::consts::PI;

use super::{RiskNet, TensorKind, TrainConfig};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with decoupled weight decay on weight matrices.
#[derive(Debug, Clone)]
pub struct Adam {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: i32,
}

impl Adam {
    pub fn new(net: &RiskNet) -> Self {
        let shapes: Vec<usize> = net.tensors().iter().map(|(_, t)| t.len()).collect();
        Self {
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            steps: 0,
        }
    }

    pub fn step(&mut self, net: &mut RiskNet, grad: &RiskNet, lr: f64, weight_decay: f64) {
        self.steps += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.steps);
        let c2 = 1.0 - ADAM_BETA2.powi(self.steps);
        let grads = grad.tensors();
        for (((kind, theta), (_, g)), (m, v)) in net
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let decay = if kind == TensorKind::Weight { lr * weight_decay } else { 0.0 };
            for i in 0..theta.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                theta[i] -= decay * theta[i];
                theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Linear warmup to `learning_rate` over `warmup_epochs`, then cosine
/// annealing down to `lr_floor` at `max_epochs`. `epoch` is zero-based.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let warmup = cfg.warmup_epochs;
    if epoch < warmup {
        return cfg.learning_rate * (epoch + 1) as f64 / warmup as f64;
    }
    let span = cfg.max_epochs.saturating_sub(warmup);
    if span == 0 {
        return cfg.lr_floor;
    }
    let progress = ((epoch - warmup) as f64 / span as f64).min(1.0);
    cfg.lr_floor + 0.5 * (cfg.learning_rate - cfg.lr_floor) * (1.0 + (PI * progress).cos())
}
