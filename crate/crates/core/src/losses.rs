//! Inter-document intra-label (IDIL) ranking loss and its ablations.
//!
//! For a label `l`, a document `x1` annotated with `l` and a document `x2`
//! annotated otherwise, the pair term is
//!
//! ```text
//! SiLU(p(l | x2) − p(l | x1))
//! ```
//!
//! and a mini-batch sums it over every label, every `x1` in the label's
//! bucket and every `x2` outside it. Only the minuend `p(l | x2)` receives
//! gradient; the subtrahend is detached. Training therefore lowers the
//! probability of labels a document does not carry instead of raising the
//! probability of the one it does.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("{0} has no pairwise form")]
    NoPairForm(LossVariant),
    #[error("batch has {rows} probability rows but {labels} labels")]
    Misaligned { rows: usize, labels: usize },
    #[error("label index {label} outside vocabulary of {num_labels}")]
    LabelOutOfRange { label: usize, num_labels: usize },
    #[error("unknown loss {0:?}")]
    Unknown(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LossVariant {
    /// Subtrahend detached; gradient flows through the minuend only.
    Idil,
    /// Minuend detached instead.
    IdilGradSub,
    /// Nothing detached.
    IdilGradBoth,
    /// IDIL plus a within-document term against the annotated label.
    IdilIntraDoc,
    /// Raw probability difference, no SiLU.
    IdilNoSilu,
    /// Cross-entropy baseline.
    Ce,
}

impl LossVariant {
    pub const ALL: [LossVariant; 6] = [
        LossVariant::Idil,
        LossVariant::IdilGradSub,
        LossVariant::IdilGradBoth,
        LossVariant::IdilIntraDoc,
        LossVariant::IdilNoSilu,
        LossVariant::Ce,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::Idil => "idil",
            LossVariant::IdilGradSub => "idil-gradsub",
            LossVariant::IdilGradBoth => "idil-gradboth",
            LossVariant::IdilIntraDoc => "idil-intradoc",
            LossVariant::IdilNoSilu => "idil-nosilu",
            LossVariant::Ce => "ce",
        }
    }

    pub fn is_pairwise(self) -> bool {
        self != LossVariant::Ce
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = LossError;
    fn from_str(s: &str) -> Result<Self, LossError> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| LossError::Unknown(s.to_string()))
    }
}

impl TryFrom<String> for LossVariant {
    type Error = LossError;
    fn try_from(s: String) -> Result<Self, LossError> {
        s.parse()
    }
}

impl From<LossVariant> for String {
    fn from(v: LossVariant) -> Self {
        v.as_str().to_string()
    }
}

/// In-batch positions grouped by annotated label, in batch order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchBuckets {
    buckets: Vec<Vec<usize>>,
    len: usize,
}

impl BatchBuckets {
    /// Positions annotated with `label`.
    pub fn bucket(&self, label: usize) -> &[usize] {
        self.buckets.get(label).map_or(&[], Vec::as_slice)
    }

    /// Positions not annotated with `label`, in batch order.
    pub fn complement(&self, label: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .buckets
            .iter()
            .enumerate()
            .filter(|(l, _)| *l != label)
            .flat_map(|(_, b)| b.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn num_labels(&self) -> usize {
        self.buckets.len()
    }

    /// Non-empty buckets as `(label, positions)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.buckets
            .iter()
            .enumerate()
            .filter(|(_, b)| !b.is_empty())
            .map(|(l, b)| (l, b.as_slice()))
    }

    /// `Σ_l |b_l|·|b_¬l|`, the number of IDIL pair terms.
    pub fn pair_count(&self) -> usize {
        self.buckets.iter().map(|b| b.len() * (self.len - b.len())).sum()
    }
}

pub fn bucket_batch(labels: &[usize]) -> BatchBuckets {
    let num = labels.iter().max().map_or(0, |m| m + 1);
    let mut buckets = vec![Vec::new(); num];
    for (pos, &l) in labels.iter().enumerate() {
        buckets[l].push(pos);
    }
    BatchBuckets { buckets, len: labels.len() }
}

/// One IDIL term: `SiLU(minuend − subtrahend)` with the variant's gradient
/// routing.
pub fn idil_pair_loss<'t>(
    minuend: Tensor<'t>,
    subtrahend: Tensor<'t>,
    variant: LossVariant,
) -> Result<Tensor<'t>, LossError> {
    let (m, s) = match variant {
        LossVariant::Idil | LossVariant::IdilIntraDoc | LossVariant::IdilNoSilu => (minuend, subtrahend.detach()),
        LossVariant::IdilGradSub => (minuend.detach(), subtrahend),
        LossVariant::IdilGradBoth => (minuend, subtrahend),
        LossVariant::Ce => return Err(LossError::NoPairForm(variant)),
    };
    let diff = m.sub(s)?;
    Ok(match variant {
        LossVariant::IdilNoSilu => diff,
        _ => diff.silu(),
    })
}

/// Mini-batch loss over a `[batch × labels]` probability matrix.
///
/// Pairwise variants return the sum over labels `l`, `x1 ∈ b_l`,
/// `x2 ∈ b_¬l` (in that loop order) of [`idil_pair_loss`]. A batch with a
/// single label yields an exact zero with no gradient path. `Ce` returns the
/// batch mean of `−log p(y|x)`.
pub fn batch_loss<'t>(
    tape: &'t Tape,
    probs: Tensor<'t>,
    labels: &[usize],
    variant: LossVariant,
) -> Result<Tensor<'t>, LossError> {
    if labels.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let shape = probs.shape();
    let (rows, num_labels) = match shape.as_slice() {
        [r, c] => (*r, *c),
        _ => return Err(AutodiffError::NotMatrix { op: "batch_loss", shape }.into()),
    };
    if rows != labels.len() {
        return Err(LossError::Misaligned { rows, labels: labels.len() });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= num_labels) {
        return Err(LossError::LabelOutOfRange { label, num_labels });
    }

    if variant == LossVariant::Ce {
        let logp = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| probs.select(i, y).map(Tensor::log))
            .collect::<Result<Vec<_>, _>>()?;
        let total = tape.sum_all(&logp)?;
        return Ok(total.scale(-1.0 / labels.len() as f64));
    }

    let buckets = bucket_batch(labels);
    let mut terms = Vec::with_capacity(buckets.pair_count());
    for (l, inside) in buckets.iter() {
        let outside = buckets.complement(l);
        for &x1 in inside {
            let sub = probs.select(x1, l)?;
            for &x2 in &outside {
                let min = probs.select(x2, l)?;
                terms.push(idil_pair_loss(min, sub, variant)?);
            }
        }
    }
    if variant == LossVariant::IdilIntraDoc {
        for (x, &y) in labels.iter().enumerate() {
            let own = probs.select(x, y)?.detach();
            for l in (0..num_labels).filter(|&l| l != y) {
                terms.push(probs.select(x, l)?.sub(own)?.silu());
            }
        }
    }
    if terms.is_empty() {
        return Ok(tape.scalar(0.0));
    }
    Ok(tape.sum_all(&terms)?)
}
