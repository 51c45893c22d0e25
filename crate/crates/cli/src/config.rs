//! JSON run configurations. Unknown keys are rejected and every config is
//! validated before any computation starts. Relative paths are resolved
//! against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use anyshot_core::anyshot::SoftmaxConfig;
use anyshot_core::{SyntheticSpec, TrainingConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    /// Dataset manifest.
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub training: TrainingConfig,
    /// Promote this many samples per novel class to the labeled set before
    /// training (few-shot training).
    #[serde(default)]
    pub shots: Option<usize>,
    #[serde(default)]
    pub shot_seed: u64,
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.training.validate()?;
        if self.shots == Some(0) {
            return Err(CliError::Validation("shots must be at least 1".into()));
        }
        Ok(())
    }
}

/// Classifier settings shared by every evaluation of an ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub synthetic_per_class: usize,
    pub softmax: SoftmaxConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            synthetic_per_class: anyshot_core::anyshot::DEFAULT_SYNTHETIC_PER_CLASS,
            softmax: SoftmaxConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    /// Fixed dataset manifest. Exactly one of `dataset` and `synthetic`.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Synthetic spec; seed `k` of the sweep uses `synthetic.seed + k`.
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    pub output_dir: PathBuf,
    /// Base training config; variant and mode are overridden per cell and
    /// seed `k` trains with `training.seed + k`.
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub eval: EvalSettings,
}

fn default_seeds() -> usize {
    5
}

impl AblateConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.training.validate()?;
        match (&self.dataset, &self.synthetic) {
            (Some(_), None) => {}
            (None, Some(spec)) => spec.validate()?,
            _ => {
                return Err(CliError::Validation(
                    "exactly one of `dataset` and `synthetic` must be given".into(),
                ))
            }
        }
        if self.seeds == 0 {
            return Err(CliError::Validation("seeds must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

pub fn load_train_config(path: &Path) -> Result<TrainRunConfig, CliError> {
    let mut cfg: TrainRunConfig = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve(base, &mut cfg.dataset);
    resolve(base, &mut cfg.output_dir);
    Ok(cfg)
}

pub fn load_ablate_config(path: &Path) -> Result<AblateConfig, CliError> {
    let mut cfg: AblateConfig = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if let Some(d) = cfg.dataset.as_mut() {
        resolve(base, d);
    }
    resolve(base, &mut cfg.output_dir);
    Ok(cfg)
}
