//! Run configuration: one JSON object with a section per component.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "output_dir": "runs/a",
//!   "trainer": { "t_max": 500, "batch_size": 8, "labeled_batch": 4 },
//!   "synthetic": { "num_labeled": 4, "num_unlabeled": 60 }
//! }
//! ```
//!
//! Missing keys take their defaults and unknown keys are rejected. The
//! top-level `seed` drives both data generation and training.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::losses::ContrastiveConfig;
use crate::network::NetworkConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Dataset manifest to train on; synthetic data is generated when absent.
    pub data: Option<PathBuf>,
    pub augment: AugmentConfig,
    pub network: NetworkConfig,
    pub losses: ContrastiveConfig,
    pub trainer: TrainConfig,
    pub synthetic: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("run"),
            data: None,
            augment: AugmentConfig::default(),
            network: NetworkConfig::default(),
            losses: ContrastiveConfig::default(),
            trainer: TrainConfig::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates; errors name the source and the line/column.
    pub fn from_json(text: &str, source: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("{}:{}:{}: {e}", source.display(), e.line(), e.column()))
        })?;
        let cfg = cfg.resolved();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Propagates the top-level seed into the sections that consume it.
    pub fn resolved(mut self) -> Self {
        self.trainer.seed = self.seed;
        self.synthetic.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.network.validate()?;
        self.trainer.validate()?;
        if !(self.losses.temperature > 0.0) {
            return Err(Error::Config("losses.temperature must be positive".into()));
        }
        if self.data.is_none() {
            self.synthetic.validate()?;
            if self.synthetic.image_size != self.network.image_size {
                return Err(Error::Config(format!(
                    "synthetic.image_size {} differs from network.image_size {}",
                    self.synthetic.image_size, self.network.image_size
                )));
            }
            if self.synthetic.num_classes != self.network.num_classes {
                return Err(Error::Config("synthetic.num_classes differs from network.num_classes".into()));
            }
            if self.synthetic.num_labeled == 0 {
                return Err(Error::Config("synthetic.num_labeled must be at least 1".into()));
            }
        }
        if self.network.in_channels != 1 {
            return Err(Error::Config("network.in_channels must be 1 for greyscale data".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
