//! Two-stage optimization: the style encoder first, then the compatibility
//! network against the frozen encoder.

mod adam;
mod stages;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, Adam, AdamConfig};
pub use stages::{sample_triplets, train_scanet, train_vsen, Stage1Record, Stage2Record, Triplet};

use crate::error::{Error, Result};
use crate::scanet::ScaConfig;
use crate::vsen::VsenConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Config {
    pub lr: f64,
    pub batch: usize,
    pub kl_weight: f64,
    pub ce_weight: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a better validation accuracy.
    pub patience: Option<usize>,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            lr: 5e-6,
            batch: 128,
            kl_weight: 0.05,
            ce_weight: 1.0,
            epochs: 20,
            patience: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Config {
    pub lr: f64,
    pub batch_triplets: usize,
    pub epochs: usize,
    pub compat_weight: f64,
    pub style_weight: f64,
    /// Condition on a reparameterized draw from the outfit's Gaussian instead of its mean.
    pub sample_style: bool,
    /// Stop after this many epochs without a better validation FITB accuracy.
    pub patience: Option<usize>,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            lr: 1e-6,
            batch_triplets: 32,
            epochs: 20,
            compat_weight: 1.0,
            style_weight: 0.5,
            sample_style: true,
            patience: Some(3),
        }
    }
}

/// Architecture widths; data-dependent sizes come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub style_dim: usize,
    pub blocks: usize,
    pub attn_heads: usize,
    pub classifier_hidden: usize,
    pub embed_dim: usize,
    pub subspaces: usize,
    pub proj_dim: usize,
    pub attn_hidden: usize,
    pub margin: f64,
    pub margin_s: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            style_dim: 64,
            blocks: 1,
            attn_heads: 2,
            classifier_hidden: 32,
            embed_dim: 64,
            subspaces: 5,
            proj_dim: 32,
            attn_hidden: 32,
            margin: 0.2,
            margin_s: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn vsen(&self, input_dim: usize, num_styles: usize) -> VsenConfig {
        VsenConfig {
            hidden: self.hidden,
            style_dim: self.style_dim,
            blocks: self.blocks,
            attn_heads: self.attn_heads,
            classifier_hidden: self.classifier_hidden,
            ..VsenConfig::new(input_dim, num_styles)
        }
    }

    pub fn sca(&self, input_dim: usize, num_categories: usize) -> ScaConfig {
        ScaConfig {
            style_dim: self.style_dim,
            embed_dim: self.embed_dim,
            subspaces: self.subspaces,
            proj_dim: self.proj_dim,
            attn_hidden: self.attn_hidden,
            margin: self.margin,
            margin_s: self.margin_s,
            ..ScaConfig::new(input_dim, num_categories)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub adam: AdamConfig,
    pub model: ModelConfig,
    pub seed: u64,
}

impl TrainConfig {
    /// Learning rates and epoch counts sized for the bundled synthetic data,
    /// where the default rates would need far more steps than a desk run allows.
    pub fn synthetic() -> Self {
        Self {
            stage1: Stage1Config {
                lr: 3e-3,
                epochs: 12,
                ..Stage1Config::default()
            },
            stage2: Stage2Config {
                lr: 1e-3,
                epochs: 12,
                ..Stage2Config::default()
            },
            ..Self::default()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let config: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("stage1.kl_weight", self.stage1.kl_weight),
            ("stage1.ce_weight", self.stage1.ce_weight),
            ("stage2.compat_weight", self.stage2.compat_weight),
            ("stage2.style_weight", self.stage2.style_weight),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative weight, got {w}")));
            }
        }
        if [self.stage1.lr, self.stage2.lr].iter().any(|lr| lr.is_nan() || *lr <= 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.stage1.batch == 0 || self.stage2.batch_triplets == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        self.adam.validate()
    }
}

/// The four loss terms of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub kl: f64,
    pub ce: f64,
    pub triplet: f64,
    pub wrong_style: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub kl: f64,
    pub ce: f64,
    pub compat: f64,
    pub style: f64,
}

impl LossWeights {
    pub fn from_config(config: &TrainConfig) -> Self {
        Self {
            kl: config.stage1.kl_weight,
            ce: config.stage1.ce_weight,
            compat: config.stage2.compat_weight,
            style: config.stage2.style_weight,
        }
    }
}

/// Weighted sum of the four loss terms.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    w.kl * c.kl + w.ce * c.ce + w.compat * c.triplet + w.style * c.wrong_style
}

/// Writes per-epoch records as CSV with a header row.
pub fn write_metrics_csv<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
