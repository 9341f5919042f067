//! One-hidden-layer MLP with a softmax head.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::data::{FeatureVector, LabelVocab};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_labels: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    pub const DEFAULT_HIDDEN: usize = 64;

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_labels", self.num_labels),
        ] {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// A named, row-major parameter buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Parameter {
    fn zeros(name: &str, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { name: name.into(), shape, values: vec![0.0; n] }
    }

    /// Glorot-uniform draw for a `[fan_in × fan_out]` weight.
    fn glorot(name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = glorot_bound(fan_in, fan_out);
        let values = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { name: name.into(), shape: vec![fan_in, fan_out], values }
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Parameter order: `w1 [dim × hidden]`, `b1 [hidden]`, `w2 [hidden × labels]`,
/// `b2 [labels]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpClassifier {
    config: ModelConfig,
    params: Vec<Parameter>,
}

pub const W1: usize = 0;
pub const B1: usize = 1;
pub const W2: usize = 2;
pub const B2: usize = 3;

/// Tensors produced by one recorded forward pass.
pub struct Forward<'t> {
    pub probs: Tensor<'t>,
    pub penultimate: Tensor<'t>,
    /// Leaf handles for the parameters, in [`MlpClassifier::params`] order.
    pub params: Vec<Tensor<'t>>,
}

/// Plain outputs of an inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Row-major `[batch × labels]`.
    pub probs: Vec<f64>,
    /// Row-major `[batch × hidden]`.
    pub penultimate: Vec<f64>,
    pub num_labels: usize,
    pub hidden_dim: usize,
}

impl Prediction {
    pub fn rows(&self) -> usize {
        self.probs.len() / self.num_labels
    }

    pub fn prob_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.num_labels)
    }

    pub fn feature_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.penultimate.chunks(self.hidden_dim)
    }
}

impl MlpClassifier {
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let params = vec![
            Parameter::glorot("w1", config.input_dim, config.hidden_dim, &mut rng),
            Parameter::zeros("b1", vec![config.hidden_dim]),
            Parameter::glorot("w2", config.hidden_dim, config.num_labels, &mut rng),
            Parameter::zeros("b2", vec![config.num_labels]),
        ];
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    /// Records `softmax(relu(x·W1 + b1)·W2 + b2)` on `tape`.
    pub fn forward<'t>(&self, tape: &'t Tape, batch: &[FeatureVector]) -> Result<Forward<'t>, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        for fv in batch {
            if fv.dim() != self.config.input_dim {
                return Err(ModelError::DimMismatch { expected: self.config.input_dim, actual: fv.dim() });
            }
        }
        let params = self
            .params
            .iter()
            .map(|p| tape.leaf(p.shape.clone(), p.values.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let rows = batch.iter().map(|fv| fv.entries().to_vec()).collect();
        let hidden = tape.sparse_matmul(rows, params[W1])?.add_row_bias(params[B1])?.relu();
        let logits = hidden.matmul(params[W2])?.add_row_bias(params[B2])?;
        let probs = logits.softmax_rows()?;
        Ok(Forward { probs, penultimate: hidden, params })
    }

    /// Forward pass on a throwaway tape.
    pub fn predict(&self, batch: &[FeatureVector]) -> Result<Prediction, ModelError> {
        let tape = Tape::new();
        let out = self.forward(&tape, batch)?;
        Ok(Prediction {
            probs: out.probs.values().to_vec(),
            penultimate: out.penultimate.values().to_vec(),
            num_labels: self.config.num_labels,
            hidden_dim: self.config.hidden_dim,
        })
    }

    /// Predicts in chunks to bound tape size on large corpora.
    pub fn predict_all(&self, docs: &[FeatureVector], chunk: usize) -> Result<Prediction, ModelError> {
        let mut out = Prediction {
            probs: Vec::with_capacity(docs.len() * self.config.num_labels),
            penultimate: Vec::with_capacity(docs.len() * self.config.hidden_dim),
            num_labels: self.config.num_labels,
            hidden_dim: self.config.hidden_dim,
        };
        for c in docs.chunks(chunk.max(1)) {
            let p = self.predict(c)?;
            out.probs.extend(p.probs);
            out.penultimate.extend(p.penultimate);
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.values.iter().all(|v| v.is_finite()))
    }
}

pub const CHECKPOINT_FORMAT: &str = "idil-ood-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk container: model plus the context needed to score new text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub feature_dim: usize,
    pub labels: LabelVocab,
    pub seed: u64,
    pub loss: String,
    pub model: MlpClassifier,
}

impl Checkpoint {
    pub fn new(model: MlpClassifier, labels: LabelVocab, seed: u64, loss: String) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            feature_dim: model.config.input_dim,
            labels,
            seed,
            loss,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let err = |msg: String| ModelError::Checkpoint { path: path.display().to_string(), msg };
        let json = serde_json::to_string(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let err = |msg: String| ModelError::Checkpoint { path: path.display().to_string(), msg };
        let text = crate::audit::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported format {:?} v{}", ck.format, ck.version)));
        }
        ck.model.config.validate()?;
        let c = ck.model.config;
        let expected = [
            vec![c.input_dim, c.hidden_dim],
            vec![c.hidden_dim],
            vec![c.hidden_dim, c.num_labels],
            vec![c.num_labels],
        ];
        if ck.model.params.len() != 4
            || ck.model.params.iter().zip(&expected).any(|(p, s)| &p.shape != s || p.values.len() != s.iter().product::<usize>())
        {
            return Err(err("parameter shapes do not match config".into()));
        }
        if ck.labels.len() != c.num_labels {
            return Err(err("label vocabulary does not match output size".into()));
        }
        Ok(ck)
    }
}
