//! Minimum class-conditional Mahalanobis distance over penultimate features,
//! with one covariance shared by all classes.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MahalanobisError {
    #[error("label {label} has {count} samples; at least 2 are required")]
    TooFewSamples { label: usize, count: usize },
    #[error("non-finite feature at row {row}")]
    NonFinite { row: usize },
    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("{rows} feature rows vs {labels} labels")]
    Misaligned { rows: usize, labels: usize },
    #[error("shrunk covariance is not positive definite (eps = {0})")]
    NotPositiveDefinite(f64),
    #[error("shrinkage eps must be finite and non-negative, got {0}")]
    BadEps(f64),
    #[error("stats file {path}: {msg}")]
    Io { path: String, msg: String },
}

/// Relative shrinkage scale: `eps = SHRINK_REL · trace(Σ) / d`.
pub const SHRINK_REL: f64 = 1e-6;
/// Floor applied when the covariance trace is zero.
pub const SHRINK_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shrinkage {
    /// `Σ + eps·I`.
    Absolute(f64),
    /// `eps = SHRINK_REL · trace(Σ)/d`, at least `SHRINK_FLOOR`.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    /// One mean per label, indexed by label.
    pub class_means: Vec<Vec<f64>>,
    /// Row-major `d × d` inverse of the shrunk shared covariance.
    pub precision: Vec<f64>,
    pub shrinkage_eps: f64,
    pub feature_dim: usize,
}

/// Fits class means and the pooled within-class covariance (scatter / n),
/// then inverts `Σ + eps·I` through a Cholesky factorization.
///
/// `features` is row-major `[n × d]`.
pub fn fit(
    features: &[f64],
    dim: usize,
    labels: &[usize],
    shrinkage: Shrinkage,
) -> Result<GaussianStats, MahalanobisError> {
    let n = labels.len();
    if dim == 0 || features.len() != n * dim {
        return Err(MahalanobisError::Misaligned { rows: features.len() / dim.max(1), labels: n });
    }
    if let Some(row) = features.chunks(dim).position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(MahalanobisError::NonFinite { row });
    }
    let num_labels = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; num_labels];
    for &l in labels {
        counts[l] += 1;
    }
    if let Some((label, &count)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
        return Err(MahalanobisError::TooFewSamples { label, count });
    }

    let mut means = vec![DVector::<f64>::zeros(dim); num_labels];
    for (row, &l) in features.chunks(dim).zip(labels) {
        means[l] += DVector::from_column_slice(row);
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        *m /= c as f64;
    }

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for (row, &l) in features.chunks(dim).zip(labels) {
        let centered = DVector::from_column_slice(row) - &means[l];
        cov.syger(1.0, &centered, &centered, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();
    cov /= n as f64;

    let eps = match shrinkage {
        Shrinkage::Absolute(e) if e.is_finite() && e >= 0.0 => e,
        Shrinkage::Absolute(e) => return Err(MahalanobisError::BadEps(e)),
        Shrinkage::Auto => (SHRINK_REL * cov.trace() / dim as f64).max(SHRINK_FLOOR),
    };
    for i in 0..dim {
        cov[(i, i)] += eps;
    }
    let chol = cov.cholesky().ok_or(MahalanobisError::NotPositiveDefinite(eps))?;
    let inv = chol.inverse();
    let precision = DMatrix::from_fn(dim, dim, |i, j| 0.5 * (inv[(i, j)] + inv[(j, i)]));

    Ok(GaussianStats {
        class_means: means.into_iter().map(|m| m.as_slice().to_vec()).collect(),
        precision: precision.transpose().as_slice().to_vec(),
        shrinkage_eps: eps,
        feature_dim: dim,
    })
}

impl GaussianStats {
    fn precision_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.feature_dim, self.feature_dim, &self.precision)
    }

    /// `min_c (x − μ_c)ᵀ P (x − μ_c)`.
    pub fn score(&self, x: &[f64]) -> Result<f64, MahalanobisError> {
        if x.len() != self.feature_dim {
            return Err(MahalanobisError::DimMismatch { expected: self.feature_dim, actual: x.len() });
        }
        let p = self.precision_matrix();
        Ok(self.min_distance(&p, x))
    }

    fn min_distance(&self, p: &DMatrix<f64>, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        self.class_means
            .iter()
            .map(|mu| {
                let d = &x - DVector::from_column_slice(mu);
                (d.transpose() * p * &d)[(0, 0)].max(0.0)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Negative distances for each `feature_dim`-wide row: higher means more
    /// in-distribution.
    pub fn confidences(&self, rows: &[f64]) -> Result<Vec<f64>, MahalanobisError> {
        if !rows.len().is_multiple_of(self.feature_dim) {
            return Err(MahalanobisError::DimMismatch { expected: self.feature_dim, actual: rows.len() % self.feature_dim });
        }
        let p = self.precision_matrix();
        Ok(rows.chunks(self.feature_dim).map(|r| -self.min_distance(&p, r)).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), MahalanobisError> {
        let err = |msg: String| MahalanobisError::Io { path: path.display().to_string(), msg };
        let json = serde_json::to_string(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, MahalanobisError> {
        let err = |msg: String| MahalanobisError::Io { path: path.display().to_string(), msg };
        let text = crate::audit::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }
}
