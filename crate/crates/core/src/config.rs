//! Run configuration: every tunable in one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoise::DenoiseConfig;
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::model::ArchConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub denoise: DenoiseConfig,
    pub energy: EnergyModel,
    /// Overrides the per-section seeds when set.
    pub seed: Option<u64>,
}

impl RunConfig {
    /// Reduced budget for a single CPU: 128-point patches, small batches and
    /// a short schedule. The architecture is unchanged.
    pub fn desk() -> Self {
        Self {
            train: TrainConfig {
                lr: 1e-3,
                batch_size: 4,
                iterations: 400,
                loss_samples: 4,
                patch_size: 128,
                val_patches: 2,
                val_interval: 100,
                ..TrainConfig::default()
            },
            denoise: DenoiseConfig { patch_size: 128, ..DenoiseConfig::default() },
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg.resolved())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Pretty JSON with every field written out.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Pushes the global seed into each section.
    pub fn resolved(mut self) -> Self {
        if let Some(s) = self.seed {
            self.train.seed = s;
            self.denoise.seed = s;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        self.denoise.validate()?;
        self.energy.validate()
    }
}
