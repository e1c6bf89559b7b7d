#![allow(dead_code)]

pub mod oracle;

use survfuse::cohort::{ModalitySpec, SyntheticSpec};
use survfuse::experiment::{ExperimentConfig, SearchSpec};

/// Two-modality cohort; `wsi_beta` and `ct_beta` are leading coefficients.
pub fn two_modality_spec(n: usize, wsi_beta: Vec<f64>, ct_beta: Vec<f64>, complementary: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_patients: n,
        modalities: vec![
            ModalitySpec {
                name: "wsi".into(),
                dim: 16,
                beta: wsi_beta,
            },
            ModalitySpec {
                name: "ct".into(),
                dim: 8,
                beta: ct_beta,
            },
        ],
        complementary,
        weibull_shape: 1.5,
        weibull_scale: 60.0,
        censoring_rate: 0.01,
        clinical_beta: 0.0,
        seed,
    }
}

/// Small search budget and short schedule for fast protocol tests.
pub fn quick_config(budget: usize, max_epochs: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        search: SearchSpec {
            budget,
            seed,
            max_epochs,
            patience: 5,
            warmup_epochs: 3,
            ..SearchSpec::default()
        },
        tie_repeats: 50,
        tie_seed: seed ^ 1,
        ..ExperimentConfig::default()
    }
}
