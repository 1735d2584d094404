//! Training configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::geometry::{D_MAX, D_MIN};
use crate::losses::LossWeights;
use crate::metrics::EvalPolicy;
use crate::networks::{DepthNetConfig, ModelConfig, PoseNetConfig};
use crate::simdata::DatasetConfig;
use crate::vibration::MlstmConfig;

/// Network widths; the input size comes from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub depth_channels: Vec<usize>,
    pub pose_channels: Vec<usize>,
    pub vibration: MlstmConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth_channels: DepthNetConfig::default().channels,
            pose_channels: PoseNetConfig::default().channels,
            vibration: MlstmConfig::default(),
        }
    }
}

impl NetworkConfig {
    /// Narrow widths used for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            depth_channels: vec![2, 3, 4],
            pose_channels: vec![3, 4],
            vibration: MlstmConfig {
                hidden: 3,
                d_vib: 4,
                reduction: 3,
            },
        }
    }

    pub fn model_config(&self, fusion: FusionMode, height: usize, width: usize) -> ModelConfig {
        ModelConfig {
            depth: DepthNetConfig {
                height,
                width,
                channels: self.depth_channels.clone(),
                fusion,
            },
            pose: PoseNetConfig {
                channels: self.pose_channels.clone(),
            },
            vibration: self.vibration,
            d_min: D_MIN,
            d_max: D_MAX,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: LossWeights,
    pub fusion: FusionMode,
    pub network: NetworkConfig,
    /// On-disk dataset; when absent the dataset is generated from `data`.
    pub dataset: Option<PathBuf>,
    pub data: DatasetConfig,
    /// Where checkpoints and the log are written after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    pub policy: EvalPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 4,
            epochs: 50,
            adam_betas: [0.9, 0.999],
            adam_eps: 1e-8,
            seed: 0,
            loss: LossWeights::default(),
            fusion: FusionMode::Fh,
            network: NetworkConfig::default(),
            dataset: None,
            data: DatasetConfig::toy(),
            checkpoint_dir: None,
            policy: EvalPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if self.adam_betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::Config(format!("adam betas {:?} outside [0, 1)", self.adam_betas)));
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::Config(format!("adam eps {} must be positive", self.adam_eps)));
        }
        self.loss.validate()?;
        if self.dataset.is_none() {
            self.data.validate()?;
        }
        self.network
            .model_config(self.fusion, self.data.height, self.data.width)
            .validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
