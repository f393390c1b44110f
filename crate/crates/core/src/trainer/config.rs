use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::augment::{DEFAULT_MASK_P, DEFAULT_SIGMA};
use crate::data::sampling::DEFAULT_STRIDE;
use crate::error::{Error, Result};
use crate::model::{LossConfig, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub lr: f64,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub augment: bool,
    pub sigma: f64,
    pub mask_p: f64,
    /// Fold held out for validation; the other folds train.
    pub val_fold: u32,
    pub stride: usize,
    /// Decision threshold on `σ(logit)` for F1.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            lr: 3e-4,
            batch: 8,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            patience: 10,
            max_epochs: 50,
            seed: 0,
            augment: true,
            sigma: DEFAULT_SIGMA,
            mask_p: DEFAULT_MASK_P,
            val_fold: 1,
            stride: DEFAULT_STRIDE,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)".into());
        }
        if self.eps.is_nan()
            || self.eps <= 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return bad("eps must be > 0 and weight_decay >= 0".into());
        }
        if self.sigma.is_nan() || self.sigma < 0.0 || !(0.0..=1.0).contains(&self.mask_p) {
            return bad("sigma must be >= 0 and mask_p in [0, 1]".into());
        }
        if !(1..=crate::data::manifest::NUM_FOLDS).contains(&self.val_fold) {
            return bad(format!("val_fold must be in 1..=5, got {}", self.val_fold));
        }
        if self.stride == 0 {
            return bad("stride must be >= 1".into());
        }
        if self.loss.lambda.is_nan() || self.loss.lambda < 0.0 {
            return bad("lambda must be >= 0".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}
