//! Training configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::motion::MotionConfig;
use crate::reenact::ReenactConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub image_size: usize,
    /// Icosphere subdivision level of the face topology.
    pub mesh_level: u32,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Weights by name: rec, fm, coeff, adv.
    pub weights: LossWeights,
    /// Network initialization and pair sampling.
    pub seed: u64,
    pub pyramid_seed: u64,
    pub basis_seed: u64,
    pub data_seed: u64,
    pub identities: usize,
    pub frames_per_identity: usize,
    /// The last identities of the dataset, never seen in training.
    pub held_out_identities: usize,
    pub log_every: usize,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub use_oracle_regressor: bool,
    pub regressor_steps: usize,
    pub regressor_batch: usize,
    pub regressor_lr: f64,
    pub disc_channels: Vec<usize>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub motion: MotionConfig,
    pub reenact: ReenactConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            image_size: 64,
            mesh_level: 3,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 2,
            steps: 2000,
            weights: LossWeights::default(),
            seed: 0,
            pyramid_seed: 7,
            basis_seed: 11,
            data_seed: 3,
            identities: 200,
            frames_per_identity: 16,
            held_out_identities: 20,
            log_every: 50,
            checkpoint_every: 500,
            use_oracle_regressor: false,
            regressor_steps: 5000,
            regressor_batch: 16,
            regressor_lr: 1e-3,
            disc_channels: vec![32, 64, 128, 256],
            dataset: None,
            checkpoint: None,
            motion: MotionConfig::default(),
            reenact: ReenactConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("batch_size", self.batch_size),
            ("identities", self.identities),
            ("frames_per_identity", self.frames_per_identity),
            ("log_every", self.log_every),
            ("regressor_batch", self.regressor_batch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("lr", self.lr), ("regressor_lr", self.regressor_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        let w = &self.weights;
        if [w.rec, w.fm, w.coeff, w.adv]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Config(
                "loss weights must be finite and nonnegative".into(),
            ));
        }
        if self.held_out_identities >= self.identities {
            return Err(Error::Config(
                "held_out_identities must leave at least one training identity".into(),
            ));
        }
        if self.frames_per_identity < 2 {
            return Err(Error::Config(
                "frames_per_identity must be at least 2 to form pairs".into(),
            ));
        }
        if self.motion.image_size != self.image_size || self.reenact.image_size != self.image_size {
            return Err(Error::Config(format!(
                "image_size {} disagrees with motion ({}) or reenact ({})",
                self.image_size, self.motion.image_size, self.reenact.image_size
            )));
        }
        Ok(())
    }

    /// Identities used for training.
    pub fn train_identities(&self) -> std::ops::Range<usize> {
        0..self.identities - self.held_out_identities
    }

    pub fn held_out(&self) -> std::ops::Range<usize> {
        self.identities - self.held_out_identities..self.identities
    }

    /// Same settings at another resolution.
    pub fn with_image_size(mut self, size: usize) -> Self {
        self.image_size = size;
        self.motion.image_size = size;
        self.reenact.image_size = size;
        self
    }
}
