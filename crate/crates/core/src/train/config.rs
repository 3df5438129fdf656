use crate::error::{Error, Result};
use crate::kv::{self, KeyValue};
use crate::model::PFFNetConfig;

use super::AdamConfig;

/// Training hyperparameters. The learning rate is constant for the whole
/// run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub iters_per_epoch: usize,
    pub total_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Validate every this many epochs; 0 disables validation.
    pub eval_every: usize,
    /// Share of patches held out for validation.
    pub val_fraction: f64,
    pub model: PFFNetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 32,
            iters_per_epoch: 2000,
            total_epochs: 72,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            eval_every: 1,
            val_fraction: 0.02,
            model: PFFNetConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale smoke profile: the tiny model on small full batches.
    pub fn tiny() -> Self {
        TrainConfig {
            batch_size: 8,
            iters_per_epoch: 50,
            total_epochs: 10,
            val_fraction: 0.0,
            model: PFFNetConfig::tiny(),
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn total_iters(&self) -> u64 {
        (self.iters_per_epoch * self.total_epochs) as u64
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("adam_eps", self.adam_eps),
            ("batch_size", self.batch_size as f64),
            ("iters_per_epoch", self.iters_per_epoch as f64),
            ("total_epochs", self.total_epochs as f64),
        ];
        if let Some((k, v)) = positive.iter().find(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("{k} must be positive, got {v}")));
        }
        for (k, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{k} must lie in [0, 1), got {b}")));
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        self.model.validate()
    }
}

impl KeyValue for TrainConfig {
    fn to_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = vec![
            ("lr".to_string(), self.lr.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("iters_per_epoch".into(), self.iters_per_epoch.to_string()),
            ("total_epochs".into(), self.total_epochs.to_string()),
            ("adam_beta1".into(), self.adam_beta1.to_string()),
            ("adam_beta2".into(), self.adam_beta2.to_string()),
            ("adam_eps".into(), self.adam_eps.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("eval_every".into(), self.eval_every.to_string()),
            ("val_fraction".into(), self.val_fraction.to_string()),
        ];
        pairs.extend(self.model.to_pairs().into_iter().map(|(k, v)| (format!("model.{k}"), v)));
        pairs
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        if let Some(k) = key.strip_prefix("model.") {
            return self.model.set(k, value);
        }
        match key {
            "lr" => self.lr = kv::value(key, value)?,
            "batch_size" => self.batch_size = kv::value(key, value)?,
            "iters_per_epoch" => self.iters_per_epoch = kv::value(key, value)?,
            "total_epochs" => self.total_epochs = kv::value(key, value)?,
            "adam_beta1" => self.adam_beta1 = kv::value(key, value)?,
            "adam_beta2" => self.adam_beta2 = kv::value(key, value)?,
            "adam_eps" => self.adam_eps = kv::value(key, value)?,
            "seed" => self.seed = kv::value(key, value)?,
            "eval_every" => self.eval_every = kv::value(key, value)?,
            "val_fraction" => self.val_fraction = kv::value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
