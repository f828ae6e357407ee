use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ablate::AblateConfig;
use super::copy_task::CopyTaskConfig;
use super::hb_lab::HbLabConfig;
use super::model::ModelConfig;
use super::train::TrainConfig;
use crate::attention::{ConnectionMomentum, MomentumConfig};
use crate::error::{Error, Result};

/// Environment variable consulted when neither `--seed` nor the config sets one.
pub const SEED_ENV: &str = "MOMO_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub kinds: Vec<String>,
    pub lengths: Vec<usize>,
    pub reps: usize,
    pub dim: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        let d = super::bench::BenchConfig::default();
        Self {
            kinds: d.kinds.iter().map(|k| k.name().to_string()).collect(),
            lengths: d.lengths,
            reps: d.reps,
            dim: d.dim,
        }
    }
}

/// Contents of a `--config` TOML file; every section is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub copy: CopyTaskConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub hb: HbLabConfig,
    pub bench: BenchSection,
    pub ablate: AblateConfig,
}

/// Pinned copy-task learning rate and epoch budget.
pub const COPY_LR: f64 = 3e-3;
pub const COPY_EPOCH_BUDGET: usize = 100;
pub const COPY_TARGET_ACCURACY: f64 = 0.99;

impl Default for RunConfig {
    /// Copy-task defaults: momentum β=0.1, γ=0.6, connection β̃=0.99,
    /// γ̃=0.99, Adam at 3e-3 for up to 100 epochs, stopping at 99%.
    fn default() -> Self {
        Self {
            seed: None,
            copy: CopyTaskConfig::default(),
            model: ModelConfig { momentum: copy_task_momentum(), ..ModelConfig::default() },
            train: TrainConfig {
                lr: COPY_LR,
                epochs: COPY_EPOCH_BUDGET,
                target_accuracy: Some(COPY_TARGET_ACCURACY),
                ..TrainConfig::default()
            },
            hb: HbLabConfig::default(),
            bench: BenchSection::default(),
            ablate: AblateConfig::default(),
        }
    }
}

pub fn copy_task_momentum() -> MomentumConfig {
    MomentumConfig {
        beta_tilde: ConnectionMomentum::Constant(0.99),
        gamma_tilde: 0.99,
        ..MomentumConfig::with_momentum(0.1, 0.6)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies the seed to the copy task and training, which share it.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.copy.seed = seed;
        self.train.seed = seed;
    }
}

/// `--seed`, then the config's top-level `seed`, then `MOMO_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        None => Ok(0),
    }
}
