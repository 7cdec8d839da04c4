use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::nn::ModelConfig;

fn one() -> usize {
    1
}

fn default_lr() -> f64 {
    1e-3
}

/// Training run description, stored as JSON. Relative paths are resolved
/// against the config file's directory by [`TrainConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Network input grid `[x, y, z]`.
    pub resize: [usize; 3],
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "one")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Preprocessing threads; 0 preprocesses on the training thread.
    #[serde(default = "one")]
    pub workers: usize,
    pub checkpoint_dir: PathBuf,
    #[serde(default = "one")]
    pub validate_every: usize,
    pub manifest: PathBuf,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        self.model.validate()?;
        if self.model.in_channels != 1 || self.model.out_channels != 2 {
            return bad("model must map 1 input channel to 2 output channels".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.validate_every == 0 {
            return bad("validate_every must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        let f = self.model.downsampling();
        for (axis, &n) in ["x", "y", "z"].iter().zip(&self.resize) {
            if n == 0 || n % f != 0 {
                return bad(format!(
                    "resize {axis} = {n} is not a positive multiple of the stride product {f}"
                ));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = std::fs::read(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: TrainConfig =
            serde_json::from_slice(&bytes).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.manifest = base.join(&cfg.manifest);
        cfg.checkpoint_dir = base.join(&cfg.checkpoint_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Settings that must agree for a checkpoint to be resumed. Epoch count,
    /// worker count and paths may change between runs.
    pub fn resume_mismatch(&self, saved: &TrainConfig) -> Option<String> {
        if self.model != saved.model {
            return Some("model architecture differs".into());
        }
        if self.resize != saved.resize {
            return Some(format!("resize {:?} vs {:?}", self.resize, saved.resize));
        }
        if self.lr != saved.lr {
            return Some(format!("lr {} vs {}", self.lr, saved.lr));
        }
        if self.batch_size != saved.batch_size {
            return Some(format!("batch_size {} vs {}", self.batch_size, saved.batch_size));
        }
        if self.seed != saved.seed {
            return Some(format!("seed {} vs {}", self.seed, saved.seed));
        }
        None
    }
}
