use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DEFAULT_DISCRIMINATOR_HIDDEN, DEFAULT_EMBED_DIM, DEFAULT_GENERATOR_HIDDEN};
use crate::optim::AdamConfig;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` selects the vanilla baseline; `Some(c)` the group-alternating,
    /// clipped discriminator. `f64::INFINITY` is allowed.
    pub max_grad_norm: Option<f64>,
    /// Alternate single-group real batches. Only read when clipping is on.
    pub alternate_groups: bool,
    /// Also clip the discriminator step on generated samples.
    pub clip_fake_step: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub noise_dim: usize,
    pub conditional: bool,
    pub embed_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    /// Real batches per epoch; defaults to `ceil(N / batch_size)`. Always
    /// rounded up to an even count so both groups get equal real steps.
    pub batches_per_epoch: Option<usize>,
    pub seed: u64,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 200,
            batch_size: 64,
            max_grad_norm: None,
            alternate_groups: true,
            clip_fake_step: false,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            noise_dim: 8,
            conditional: false,
            embed_dim: DEFAULT_EMBED_DIM,
            generator_hidden: DEFAULT_GENERATOR_HIDDEN.to_vec(),
            discriminator_hidden: DEFAULT_DISCRIMINATOR_HIDDEN.to_vec(),
            batches_per_epoch: None,
            seed: 0,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

/// Default max gradient norm for the clipped trainer.
pub const DEFAULT_MAX_GRAD_NORM: f64 = 2.0;

impl TrainConfig {
    pub fn vanilla() -> Self {
        Self::default()
    }

    pub fn repfair(max_grad_norm: f64) -> Self {
        Self {
            max_grad_norm: Some(max_grad_norm),
            ..Self::default()
        }
    }

    pub fn is_vanilla(&self) -> bool {
        self.max_grad_norm.is_none()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("noise_dim", self.noise_dim),
            ("embed_dim", self.embed_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if let Some(c) = self.max_grad_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("max_grad_norm must be positive, got {c}")));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} invalid", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} outside [0,1)")));
            }
        }
        if self.adam_eps <= 0.0 {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if self.batches_per_epoch == Some(0) || self.checkpoint_every == Some(0) {
            return Err(Error::Config("batches_per_epoch and checkpoint_every must be positive".into()));
        }
        if self.checkpoint_every.is_some() && self.checkpoint_dir.is_none() {
            return Err(Error::Config("checkpoint_every needs checkpoint_dir".into()));
        }
        Ok(())
    }

    /// Real batches per epoch for a dataset of `n` rows.
    pub fn batches_for(&self, n: usize) -> usize {
        let b = self.batches_per_epoch.unwrap_or_else(|| n.div_ceil(self.batch_size)).max(1);
        b + b % 2
    }
}

/// Independent seed for a named random stream of one run.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
