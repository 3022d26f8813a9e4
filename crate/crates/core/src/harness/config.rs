use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::model::ModelConfig;
use crate::objectives::LossWeights;
use crate::signalio::CorpusConfig;

pub const SEED_ENV: &str = "ADENET_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Multiplicative learning-rate factor applied once per epoch.
    pub lr_decay_per_epoch: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            lr_decay_per_epoch: 0.95,
            epochs: 20,
            batch_size: 4,
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

impl OptimConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay_per_epoch.powi(epoch as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrMode {
    /// One SNR per batch, cycling through the list.
    Mixed,
    /// Every batch uses the first SNR of the list.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub snr_db: Vec<f64>,
    pub snr_mode: SnrMode,
    /// Random flips and rotations of training faces.
    pub augment: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            snr_db: vec![0.0, 5.0, 10.0],
            snr_mode: SnrMode::Mixed,
            augment: true,
        }
    }
}

impl DataConfig {
    pub fn snr_for_batch(&self, batch: usize) -> f64 {
        match self.snr_mode {
            SnrMode::Mixed => self.snr_db[batch % self.snr_db.len()],
            SnrMode::Fixed => self.snr_db[0],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub loss: LossWeights,
    /// Used by corpus generation only.
    pub corpus: CorpusConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let o = &self.optim;
        if !(o.lr > 0.0) {
            return Err(Error::Config(format!("lr {} must be positive", o.lr)));
        }
        if !(o.lr_decay_per_epoch > 0.0 && o.lr_decay_per_epoch <= 1.0) {
            return Err(Error::Config(format!("lr decay {} outside (0, 1]", o.lr_decay_per_epoch)));
        }
        if o.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(o.weight_decay >= 0.0 && o.clip_norm > 0.0) {
            return Err(Error::Config("weight decay must be ≥ 0 and clip norm > 0".into()));
        }
        if self.data.snr_db.is_empty() || self.data.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config(format!("invalid snr list {:?}", self.data.snr_db)));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// Reads, applies the seed override from the environment and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.optim.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    /// Dotted key → JSON-encoded leaf value.
    pub fn flatten(&self) -> BTreeMap<String, String> {
        fn walk(prefix: &str, v: &serde_json::Value, out: &mut BTreeMap<String, String>) {
            match v {
                serde_json::Value::Object(map) => {
                    for (k, child) in map {
                        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                        walk(&key, child, out);
                    }
                }
                leaf => {
                    out.insert(prefix.to_owned(), leaf.to_string());
                }
            }
        }
        let mut out = BTreeMap::new();
        walk("", &serde_json::to_value(self).expect("config serialises"), &mut out);
        out
    }
}

/// Keys whose values differ between two configurations.
pub fn config_diff(a: &RunConfig, b: &RunConfig) -> Vec<String> {
    let (fa, fb) = (a.flatten(), b.flatten());
    fa.keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect()
}
