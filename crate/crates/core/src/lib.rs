//! Self-supervised out-of-distribution detection for text classifiers.
//!
//! A softmax classifier is trained on in-distribution documents only, with a
//! pairwise ranking loss that compares the same label's probability across
//! documents (see [`losses`]). Its maximum softmax probability, or a
//! Mahalanobis distance over its hidden features, then separates
//! in-distribution from OOD inputs; [`metrics`] scores that separation.

pub mod audit;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod experiment;
pub mod losses;
pub mod mahalanobis;
pub mod metrics;
pub mod model;
pub mod report;
pub mod trainer;

pub use autodiff::{Tape, Tensor};
pub use losses::{batch_loss, LossVariant};
pub use metrics::{MetricsReport, ScoreSet};
pub use model::{MlpClassifier, ModelConfig};
pub use trainer::{train, TrainConfig, TrainLog};
