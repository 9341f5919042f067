//! Experiment configuration file (TOML).
//!
//! ```toml
//! [data]
//! in_dist = "corpus/in_dist.jsonl"
//! ood = ["corpus/ood.jsonl"]
//! feature_dim = 4096
//!
//! [model]
//! hidden_dim = 64
//!
//! [train]
//! epochs = 5
//! batch_size = 16
//! loss = "idil"
//!
//! [experiment]
//! seeds = [1, 2, 3]
//! confidence = "max-softmax"
//! out_dir = "runs/idil"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

pub const OUT_DIR_ENV: &str = "IDIL_OOD_OUT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Confidence {
    #[default]
    MaxSoftmax,
    Mahalanobis,
}

impl Confidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Confidence::MaxSoftmax => "max-softmax",
            Confidence::Mahalanobis => "mahalanobis",
        }
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Confidence {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "max-softmax" => Ok(Confidence::MaxSoftmax),
            "mahalanobis" => Ok(Confidence::Mahalanobis),
            _ => Err(ConfigError::Invalid(format!("unknown confidence source {s:?}"))),
        }
    }
}

/// Learning-rate preset: `finetune` uses the small rate typical for transformer fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub in_dist: PathBuf,
    #[serde(default)]
    pub ood: Vec<PathBuf>,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// Optional OOD sample scored between epochs; never used for gradients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_ood: Option<PathBuf>,
}

fn default_feature_dim() -> usize {
    4096
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden_dim: ModelConfig::DEFAULT_HIDDEN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: Option<f64>,
    pub preset: Preset,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss: crate::losses::LossVariant,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: None,
            preset: Preset::Desk,
            weight_decay: t.weight_decay,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            loss: t.variant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub seeds: Vec<u64>,
    pub confidence: Confidence,
    pub out_dir: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { seeds: vec![1, 2, 3], confidence: Confidence::MaxSoftmax, out_dir: PathBuf::from("runs") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base.to_path_buf(),
            msg: e.to_string(),
        })?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = crate::audit::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            ConfigError::Parse { msg, .. } => ConfigError::Parse { path: path.to_path_buf(), msg },
            other => other,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.in_dist);
        self.data.ood.iter_mut().for_each(fix);
        if let Some(v) = self.data.val_ood.as_mut() {
            fix(v);
        }
        fix(&mut self.experiment.out_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.data.feature_dim < 2 || !self.data.feature_dim.is_power_of_two() {
            return bad("data.feature_dim must be a power of two >= 2");
        }
        if self.model.hidden_dim == 0 {
            return bad("model.hidden_dim must be >= 1");
        }
        if self.experiment.seeds.is_empty() {
            return bad("experiment.seeds must not be empty");
        }
        self.train_config(self.experiment.seeds[0])
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn lr(&self) -> f64 {
        match (self.train.lr, self.train.preset) {
            (Some(lr), _) => lr,
            (None, Preset::Finetune) => TrainConfig::FINETUNE_LR,
            (None, Preset::Desk) => TrainConfig::default().lr,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.lr(),
            weight_decay: self.train.weight_decay,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            eps: self.train.eps,
            seed,
            variant: self.train.loss,
        }
    }

    pub fn model_config(&self, num_labels: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            input_dim: self.data.feature_dim,
            hidden_dim: self.model.hidden_dim,
            num_labels,
            init_seed: seed,
        }
    }

    /// Applies the `IDIL_OOD_OUT` override, if set.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.experiment.out_dir = PathBuf::from(dir);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the effective configuration, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}
