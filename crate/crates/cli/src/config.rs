//! TOML run configuration. Unknown keys are rejected at every level.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use survfuse::cohort::{ModalitySpec, SyntheticSpec};
use survfuse::experiment::{derive_seed, SearchSpec, Strategy, DEFAULT_TIE_REPEATS};
use survfuse::metrics::DEFAULT_HORIZON_MONTHS;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every unset sub-seed derives from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub horizon_months: Option<f64>,
    pub strategies: Option<Vec<Strategy>>,
    pub tie_repeats: Option<usize>,
    pub cohort: Option<CohortSection>,
    pub synthetic: Option<SyntheticSection>,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub seeds: SeedOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSection {
    pub manifest: PathBuf,
    pub point_table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySection {
    pub name: String,
    pub dim: usize,
    #[serde(default)]
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_patients: usize,
    pub modalities: Vec<ModalitySection>,
    #[serde(default)]
    pub complementary: f64,
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    /// Exactly one of `censoring_rate` and `target_event_fraction`.
    pub censoring_rate: Option<f64>,
    pub target_event_fraction: Option<f64>,
    #[serde(default)]
    pub clinical_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub budget: usize,
    pub alpha_step: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub full_batch: bool,
}

impl Default for SearchSection {
    fn default() -> Self {
        let d = SearchSpec::default();
        Self {
            budget: d.budget,
            alpha_step: d.alpha_step,
            max_epochs: d.max_epochs,
            patience: d.patience,
            batch_size: d.batch_size,
            warmup_epochs: d.warmup_epochs,
            full_batch: d.full_batch,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedOverrides {
    pub fold_plan: Option<u64>,
    pub search: Option<u64>,
    pub tie_break: Option<u64>,
    pub synthetic: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub fold_plan: u64,
    pub search: u64,
    pub tie_break: u64,
    pub synthetic: u64,
}

/// A config file with relative paths resolved against its directory.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

pub fn load_config(path: &Path, seed_override: Option<u64>) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut config: RunConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, base_dir })
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn seeds(&self) -> Seeds {
        let c = &self.config;
        let o = &c.seeds;
        Seeds {
            fold_plan: o.fold_plan.unwrap_or_else(|| derive_seed(c.seed, &[1])),
            search: o.search.unwrap_or_else(|| derive_seed(c.seed, &[2])),
            tie_break: o.tie_break.unwrap_or_else(|| derive_seed(c.seed, &[3])),
            synthetic: o.synthetic.unwrap_or_else(|| derive_seed(c.seed, &[4])),
        }
    }

    pub fn horizon(&self, flag: Option<f64>) -> Result<f64> {
        let h = flag.or(self.config.horizon_months).unwrap_or(DEFAULT_HORIZON_MONTHS);
        check_horizon(h)
    }

    pub fn strategies(&self) -> Result<Vec<Strategy>> {
        match &self.config.strategies {
            Some(s) if s.is_empty() => Err(CliError::Config("strategies must not be empty".into())),
            Some(s) => Ok(s.clone()),
            None => Ok(Strategy::ALL.to_vec()),
        }
    }

    pub fn tie_repeats(&self) -> Result<usize> {
        let n = self.config.tie_repeats.unwrap_or(DEFAULT_TIE_REPEATS);
        if n < 2 {
            return Err(CliError::Config(format!("tie_repeats must be at least 2, got {n}")));
        }
        Ok(n)
    }

    pub fn search_spec(&self) -> Result<SearchSpec> {
        let s = &self.config.search;
        let spec = SearchSpec {
            budget: s.budget,
            alpha_step: s.alpha_step,
            seed: self.seeds().search,
            max_epochs: s.max_epochs,
            patience: s.patience,
            batch_size: s.batch_size,
            warmup_epochs: s.warmup_epochs,
            full_batch: s.full_batch,
        };
        spec.validate().map_err(|e| CliError::Config(format!("search: {e}")))?;
        Ok(spec)
    }

    pub fn cohort(&self) -> Result<&CohortSection> {
        self.config
            .cohort
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [cohort] section".into()))
    }

    /// Synthetic spec with its censoring rate; `None` for the rate means it
    /// must still be calibrated to `target_event_fraction`.
    pub fn synthetic_spec(&self) -> Result<(SyntheticSpec, Option<f64>)> {
        let s = self
            .config
            .synthetic
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [synthetic] section".into()))?;
        let (rate, target) = match (s.censoring_rate, s.target_event_fraction) {
            (Some(r), None) => (r, None),
            (None, Some(t)) => {
                if !(t > 0.0 && t < 1.0) {
                    return Err(CliError::Config(format!(
                        "synthetic.target_event_fraction must be in (0, 1), got {t}"
                    )));
                }
                (1.0, Some(t))
            }
            _ => {
                return Err(CliError::Config(
                    "synthetic: set exactly one of censoring_rate and target_event_fraction".into(),
                ))
            }
        };
        let spec = SyntheticSpec {
            n_patients: s.n_patients,
            modalities: s
                .modalities
                .iter()
                .map(|m| ModalitySpec {
                    name: m.name.clone(),
                    dim: m.dim,
                    beta: m.beta.clone(),
                })
                .collect(),
            complementary: s.complementary,
            weibull_shape: s.weibull_shape,
            weibull_scale: s.weibull_scale,
            censoring_rate: rate,
            clinical_beta: s.clinical_beta,
            seed: self.seeds().synthetic,
        };
        spec.validate().map_err(|e| CliError::Config(format!("synthetic.{}", strip_prefix(&e.to_string()))))?;
        Ok((spec, target))
    }
}

fn strip_prefix(msg: &str) -> &str {
    msg.strip_prefix("invalid synthetic spec: ").unwrap_or(msg)
}

pub fn check_horizon(h: f64) -> Result<f64> {
    if !(h.is_finite() && h > 0.0) {
        return Err(CliError::Config(format!("horizon_months must be positive, got {h}")));
    }
    Ok(h)
}
