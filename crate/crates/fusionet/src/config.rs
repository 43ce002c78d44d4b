//! Run configuration: built-in defaults, overridden by a flat JSON file,
//! overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::Path;

use fusionet_core::training::{SelectMetric, TrainConfig};
use fusionet_core::{Dims, FusionKind, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully resolved settings of one run. Serialised as-is into run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub fusion: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub select_metric: String,
    pub mask_padding: bool,
    pub visual_dim: usize,
    pub hidden: usize,
    pub seq_len: usize,
    pub attention: usize,
    pub embed: usize,
    pub conv1: usize,
    pub conv2: usize,
    /// Tokens seen fewer times in the training split map to OOV.
    pub min_count: usize,
    /// Manifest label string → class id.
    pub label_map: BTreeMap<String, usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dims = Dims::default();
        let train = TrainConfig::default();
        Self {
            fusion: FusionKind::McaScf.as_str().into(),
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs: train.epochs,
            seed: train.seed,
            select_metric: train.select_metric.as_str().into(),
            mask_padding: false,
            visual_dim: dims.visual,
            hidden: dims.hidden,
            seq_len: dims.seq_len,
            attention: dims.attention,
            embed: dims.embed,
            conv1: dims.conv[0],
            conv2: dims.conv[1],
            min_count: 1,
            label_map: default_label_map(),
        }
    }
}

pub fn default_label_map() -> BTreeMap<String, usize> {
    [("hate", 1), ("not_hate", 0), ("offense", 1), ("not_offense", 0)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

/// Values given on the command line; `None` keeps the file or default value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub fusion: Option<String>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub select_metric: Option<String>,
    pub mask_padding: Option<bool>,
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        let o = overrides.clone();
        if let Some(v) = o.fusion {
            cfg.fusion = v;
        }
        if let Some(v) = o.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = o.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = o.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = o.seed {
            cfg.seed = v;
        }
        if let Some(v) = o.select_metric {
            cfg.select_metric = v;
        }
        if let Some(v) = o.mask_padding {
            cfg.mask_padding = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Keys missing from the file keep their defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        let Some(file) = value.as_object_mut() else {
            return Err(Error::Config(format!(
                "{}: config must be a JSON object",
                path.display()
            )));
        };
        let mut merged = serde_json::to_value(Self::default()).expect("config serialises");
        for (k, v) in std::mem::take(file) {
            merged[k] = v;
        }
        serde_json::from_value(merged).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion_kind()?;
        self.select_metric()?;
        self.train_config(self.seed).validate()?;
        self.model_config(2).dims.validate()?;
        if self.label_map.values().any(|&v| v > 1) {
            return Err(Error::Config("label_map values must be 0 or 1".into()));
        }
        Ok(())
    }

    pub fn fusion_kind(&self) -> Result<FusionKind> {
        Ok(self.fusion.parse()?)
    }

    pub fn select_metric(&self) -> Result<SelectMetric> {
        Ok(self.select_metric.parse()?)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            visual: self.visual_dim,
            hidden: self.hidden,
            seq_len: self.seq_len,
            attention: self.attention,
            embed: self.embed,
            conv: [self.conv1, self.conv2],
        }
    }

    /// Panics if `fusion` is invalid; call [`RunConfig::validate`] first.
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            fusion: self.fusion_kind().unwrap_or(FusionKind::McaScf),
            dims: self.dims(),
            vocab_size,
            mask_padding: self.mask_padding,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            select_metric: self.select_metric().unwrap_or_default(),
        }
    }
}
