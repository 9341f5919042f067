//! Seeded mini-batch training with AdamW and a linear decay schedule.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::data::FeatureVector;
use crate::losses::{batch_loss, bucket_batch, LossError, LossVariant};
use crate::model::{MlpClassifier, ModelError, Parameter};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite gradient in parameter {param} at step {step} (entry {index}: {value})")]
    NonFiniteGradient { param: String, step: usize, index: usize, value: f64 },
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("parameter/gradient shape mismatch for {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    #[serde(rename = "loss")]
    pub variant: LossVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 16,
            lr: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 1,
            variant: LossVariant::Idil,
        }
    }
}

impl TrainConfig {
    /// Learning rate used for transformer fine-tuning in the original setup.
    pub const FINETUNE_LR: f64 = 5e-5;

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 || (self.variant.is_pairwise() && self.batch_size < 2) {
            return bad(format!("batch_size {} too small for loss {}", self.batch_size, self.variant));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("AdamW constants out of range".into());
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }
}

/// `lr0 · (1 − step/total)`, no warm-up.
pub fn linear_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64, TrainError> {
    if total_steps == 0 {
        return Err(TrainError::Config("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(TrainError::Config(format!("step {step} beyond total {total_steps}")));
    }
    Ok(lr0 * (1.0 - step as f64 / total_steps as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamWState {
    pub fn new(params: &[Parameter]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.values.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.values.len()]).collect(),
            t: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `θ ← θ − lr·(m̂/(√v̂ + ε) + λ·θ)`.
///
/// Gradients are checked for finiteness before anything is modified.
pub fn adamw_step(
    params: &mut [Parameter],
    grads: &[Vec<f64>],
    state: &mut AdamWState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::Shape("parameter list".into()));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.values.len() != g.len() {
            return Err(TrainError::Shape(p.name.clone()));
        }
        if let Some((index, &value)) = g.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient { param: p.name.clone(), step: state.t as usize + 1, index, value });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for i in 0..g.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let theta = p.values[i];
            p.values[i] = theta - lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * theta);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Validation OOD metrics after one epoch, as percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationRecord {
    pub fpr95: f64,
    pub err: f64,
    pub auroc: f64,
    pub aupr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_secs: f64,
    pub validation: Option<ValidationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub n_train: usize,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub warnings: Vec<String>,
}

impl TrainLog {
    /// `step,loss` CSV.
    pub fn write_steps_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "step,loss")?;
        for s in &self.steps {
            writeln!(out, "{},{}", s.step, s.loss)?;
        }
        out.flush()
    }

    /// `epoch,mean_loss,fpr95,err,auroc,aupr,wall_secs` CSV; validation
    /// columns are empty when no hook ran.
    pub fn write_epochs_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "epoch,mean_loss,fpr95,err,auroc,aupr,wall_secs")?;
        for e in &self.epochs {
            let val = match e.validation {
                Some(v) => format!("{:.2},{:.2},{:.2},{:.2}", v.fpr95, v.err, v.auroc, v.aupr),
                None => ",,,".into(),
            };
            writeln!(out, "{},{},{},{:.3}", e.epoch, e.mean_loss, val, e.wall_secs)?;
        }
        out.flush()
    }
}

/// Called between epochs on the current parameters.
pub type ValidationHook<'a> = dyn FnMut(usize, &MlpClassifier) -> Result<ValidationRecord, TrainError> + 'a;

/// Trains `model` in place on labeled feature vectors.
///
/// Each epoch reshuffles with a seeded generator, walks fixed-size batches
/// (the final partial batch is kept), and applies one AdamW step per batch
/// at the linearly decayed rate. Identical inputs and seed give
/// bit-identical parameters.
pub fn train(
    model: &mut MlpClassifier,
    features: &[FeatureVector],
    labels: &[usize],
    cfg: &TrainConfig,
    mut val_hook: Option<&mut ValidationHook<'_>>,
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    if features.len() != labels.len() || features.is_empty() {
        return Err(TrainError::Config(format!(
            "{} feature vectors vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    let num_labels = model.config().num_labels;
    if let Some(&l) = labels.iter().find(|&&l| l >= num_labels) {
        return Err(TrainError::Config(format!("label {l} outside model output size {num_labels}")));
    }

    let n = features.len();
    let per_epoch = cfg.steps_per_epoch(n);
    let total = per_epoch * cfg.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut state = AdamWState::new(model.params());
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainLog { config: *cfg, n_train: n, steps: Vec::with_capacity(total), epochs: Vec::new(), warnings: Vec::new() };

    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut any_pairs = false;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<FeatureVector> = chunk.iter().map(|&i| features[i].clone()).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            any_pairs |= bucket_batch(&batch_labels).pair_count() > 0;

            let tape = Tape::new();
            let fwd = model.forward(&tape, &batch)?;
            let loss = batch_loss(&tape, fwd.probs, &batch_labels, cfg.variant)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { step, loss: value });
            }
            loss.backward().map_err(LossError::from)?;
            let grads: Vec<Vec<f64>> = fwd.params.iter().map(|p| p.grad_or_zero()).collect();
            let lr = linear_lr(step, total, cfg.lr)?;
            adamw_step(model.params_mut(), &grads, &mut state, lr, cfg)?;

            log.steps.push(StepRecord { step, epoch, lr, loss: value });
            loss_sum += value;
            step += 1;
        }
        if cfg.variant.is_pairwise() && !any_pairs {
            let msg = format!("epoch {epoch}: every batch held a single label; {} loss was identically zero", cfg.variant);
            log::warn!("{msg}");
            log.warnings.push(msg);
        }
        let validation = match val_hook.as_mut() {
            Some(hook) => Some(hook(epoch, model)?),
            None => None,
        };
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / per_epoch as f64,
            wall_secs: started.elapsed().as_secs_f64(),
            validation,
        });
    }
    Ok(log)
}
