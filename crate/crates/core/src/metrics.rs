//! Confidence scores and threshold-free / thresholded OOD metrics.
//!
//! In-distribution samples are the positive class and a higher score means
//! "more in-distribution". Threshold metrics evaluate the rule
//! `score > δ ⇒ in-distribution` over δ at ±∞ and at the midpoints between
//! adjacent distinct pooled scores, which covers every achievable operating
//! point.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{0} score list is empty")]
    Empty(&'static str),
    #[error("non-finite score in {0} list")]
    NonFinite(&'static str),
    #[error("length mismatch: {0} rows vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("percentile table needs at least 2 bins, got {0}")]
    Bins(usize),
    #[error("probability row width must be positive")]
    ZeroWidth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub in_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(in_scores: Vec<f64>, ood_scores: Vec<f64>) -> Result<Self, MetricsError> {
        let s = Self { in_scores, ood_scores };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.in_scores.is_empty() {
            return Err(MetricsError::Empty("in-distribution"));
        }
        if self.ood_scores.is_empty() {
            return Err(MetricsError::Empty("OOD"));
        }
        if !self.in_scores.iter().all(|s| s.is_finite()) {
            return Err(MetricsError::NonFinite("in-distribution"));
        }
        if !self.ood_scores.iter().all(|s| s.is_finite()) {
            return Err(MetricsError::NonFinite("OOD"));
        }
        Ok(())
    }

    /// In and OOD roles exchanged.
    pub fn swapped(&self) -> Self {
        Self { in_scores: self.ood_scores.clone(), ood_scores: self.in_scores.clone() }
    }
}

/// Largest probability of each `width`-sized row.
pub fn max_softmax(probs: &[f64], width: usize) -> Vec<f64> {
    assert!(width > 0, "row width must be positive");
    probs
        .chunks(width)
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Number of elements of sorted `v` strictly greater than `x`.
fn count_above(v: &[f64], x: f64) -> usize {
    v.len() - v.partition_point(|&s| s <= x)
}

/// Number of elements of sorted `v` strictly less than `x`.
fn count_below(v: &[f64], x: f64) -> usize {
    v.partition_point(|&s| s < x)
}

/// The threshold grid: −∞, midpoints between adjacent distinct pooled
/// scores, +∞.
pub fn threshold_grid(s: &ScoreSet) -> Vec<f64> {
    let mut pooled: Vec<f64> = s.in_scores.iter().chain(&s.ood_scores).copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();
    let mut grid = Vec::with_capacity(pooled.len() + 1);
    grid.push(f64::NEG_INFINITY);
    grid.extend(pooled.windows(2).map(|w| {
        // adjacent floats can round the midpoint up onto w[1]; any value in
        // [w[0], w[1]) gives the same operating point under `>`
        let mid = w[0] + (w[1] - w[0]) / 2.0;
        if mid < w[1] { mid } else { w[0] }
    }));
    grid.push(f64::INFINITY);
    grid
}

/// `(TPR, FPR)` of the rule `score > δ` at every grid threshold.
pub fn operating_points(s: &ScoreSet) -> Vec<(f64, f64)> {
    let ins = sorted(&s.in_scores);
    let oods = sorted(&s.ood_scores);
    let (n_in, n_ood) = (ins.len() as f64, oods.len() as f64);
    threshold_grid(s)
        .into_iter()
        .map(|d| (count_above(&ins, d) as f64 / n_in, count_above(&oods, d) as f64 / n_ood))
        .collect()
}

/// Smallest FPR among thresholds whose TPR reaches `tpr_target`.
pub fn fpr_at_tpr(s: &ScoreSet, tpr_target: f64) -> Result<f64, MetricsError> {
    s.validate()?;
    Ok(operating_points(s)
        .into_iter()
        .filter(|&(tpr, _)| tpr >= tpr_target)
        .map(|(_, fpr)| fpr)
        .fold(f64::INFINITY, f64::min))
}

pub fn fpr95(s: &ScoreSet) -> Result<f64, MetricsError> {
    fpr_at_tpr(s, 0.95)
}

/// Minimum over thresholds of `0.5·(1 − TPR) + 0.5·FPR`.
pub fn detection_error(s: &ScoreSet) -> Result<f64, MetricsError> {
    s.validate()?;
    Ok(operating_points(s)
        .into_iter()
        .map(|(tpr, fpr)| 0.5 * (1.0 - tpr) + 0.5 * fpr)
        .fold(f64::INFINITY, f64::min))
}

/// Probability that an in-distribution score exceeds an OOD score, ties
/// counting one half.
pub fn auroc(s: &ScoreSet) -> Result<f64, MetricsError> {
    s.validate()?;
    let oods = sorted(&s.ood_scores);
    // twice the Mann-Whitney U, kept integral
    let twice_u: u64 = s
        .in_scores
        .iter()
        .map(|&x| {
            let below = count_below(&oods, x);
            let tied = oods.len() - below - count_above(&oods, x);
            (2 * below + tied) as u64
        })
        .sum();
    Ok(twice_u as f64 / (2 * s.in_scores.len() * s.ood_scores.len()) as f64)
}

/// Average precision with in-distribution as positives. Tied negatives rank
/// ahead of tied positives.
pub fn aupr(s: &ScoreSet) -> Result<f64, MetricsError> {
    s.validate()?;
    let oods = sorted(&s.ood_scores);
    let mut ins = sorted(&s.in_scores);
    ins.reverse();
    let mut total = 0.0;
    let mut i = 0;
    while i < ins.len() {
        let score = ins[i];
        let group = ins[i..].iter().take_while(|&&x| x == score).count();
        let neg_ahead = oods.len() - count_below(&oods, score);
        for j in 1..=group {
            let tp = i + j;
            total += tp as f64 / (tp + neg_ahead) as f64;
        }
        i += group;
    }
    Ok(total / ins.len() as f64)
}

/// Argmax index of a row, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(probs: &[f64], width: usize, gold: &[usize]) -> Result<f64, MetricsError> {
    if width == 0 {
        return Err(MetricsError::ZeroWidth);
    }
    let rows = probs.len() / width;
    if rows != gold.len() || !probs.len().is_multiple_of(width) {
        return Err(MetricsError::LengthMismatch(rows, gold.len()));
    }
    if rows == 0 {
        return Err(MetricsError::Empty("gold"));
    }
    let correct = probs.chunks(width).zip(gold).filter(|(row, &g)| argmax(row) == g).count();
    Ok(correct as f64 / rows as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PercentileRow {
    pub threshold: f64,
    /// Percentage of in-distribution scores `<= threshold`.
    pub pct_in: f64,
    /// Percentage of OOD scores `<= threshold`.
    pub pct_ood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PercentileTable {
    pub rows: Vec<PercentileRow>,
    /// Least in-distribution score.
    pub threshold: f64,
    /// Fraction of OOD scores at or above `threshold`.
    pub ood_mass_above: f64,
}

/// Cumulative score distributions of both populations at `bins + 1` evenly
/// spaced thresholds spanning the pooled range.
pub fn percentile_table(s: &ScoreSet, bins: usize) -> Result<PercentileTable, MetricsError> {
    if bins < 2 {
        return Err(MetricsError::Bins(bins));
    }
    s.validate()?;
    let ins = sorted(&s.in_scores);
    let oods = sorted(&s.ood_scores);
    let lo = ins[0].min(oods[0]);
    let hi = ins[ins.len() - 1].max(oods[oods.len() - 1]);
    let pct_le = |v: &[f64], t: f64| 100.0 * v.partition_point(|&x| x <= t) as f64 / v.len() as f64;
    let rows = (0..=bins)
        .map(|k| {
            let t = if k == bins { hi } else { lo + (hi - lo) * k as f64 / bins as f64 };
            PercentileRow { threshold: t, pct_in: pct_le(&ins, t), pct_ood: pct_le(&oods, t) }
        })
        .collect();
    let threshold = ins[0];
    let ood_mass_above = (oods.len() - count_below(&oods, threshold)) as f64 / oods.len() as f64;
    Ok(PercentileTable { rows, threshold, ood_mass_above })
}

/// One evaluation cell; metric fields are percentages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub in_dist: String,
    pub ood: String,
    pub method: String,
    pub seed: String,
    pub fpr95: f64,
    pub err: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub accuracy: Option<f64>,
}

/// The four OOD metrics, as percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OodMetrics {
    pub fpr95: f64,
    pub err: f64,
    pub auroc: f64,
    pub aupr: f64,
}

pub fn ood_metrics(s: &ScoreSet) -> Result<OodMetrics, MetricsError> {
    Ok(OodMetrics {
        fpr95: 100.0 * fpr95(s)?,
        err: 100.0 * detection_error(s)?,
        auroc: 100.0 * auroc(s)?,
        aupr: 100.0 * aupr(s)?,
    })
}

impl MetricsReport {
    pub fn new(in_dist: &str, ood: &str, method: &str, seed: &str, m: OodMetrics, accuracy: Option<f64>) -> Self {
        Self {
            in_dist: in_dist.into(),
            ood: ood.into(),
            method: method.into(),
            seed: seed.into(),
            fpr95: m.fpr95,
            err: m.err,
            auroc: m.auroc,
            aupr: m.aupr,
            accuracy,
        }
    }

    pub fn in_range(&self) -> bool {
        let ok = |v: f64| (0.0..=100.0).contains(&v);
        ok(self.fpr95) && ok(self.err) && ok(self.auroc) && ok(self.aupr) && self.accuracy.is_none_or(ok)
    }

    /// Arithmetic mean of several rows (same cell, different seeds).
    pub fn mean(rows: &[MetricsReport]) -> Option<MetricsReport> {
        let first = rows.first()?;
        let n = rows.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let accuracy = rows
            .iter()
            .map(|r| r.accuracy)
            .collect::<Option<Vec<f64>>>()
            .map(|a| a.iter().sum::<f64>() / n);
        Some(MetricsReport {
            in_dist: first.in_dist.clone(),
            ood: first.ood.clone(),
            method: first.method.clone(),
            seed: "mean".into(),
            fpr95: avg(|r| r.fpr95),
            err: avg(|r| r.err),
            auroc: avg(|r| r.auroc),
            aupr: avg(|r| r.aupr),
            accuracy,
        })
    }
}
