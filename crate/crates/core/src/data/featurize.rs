use serde::{Deserialize, Serialize};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric runs of `text`.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Sparse, L2-normalized hashed term-count vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    dim: usize,
    /// Sorted by index, no duplicates, no zero weights.
    entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, w) in &self.entries {
            out[i] = w;
        }
        out
    }
}

/// Hashes each token with FNV-1a into `dim` buckets, counts, then
/// L2-normalizes. Text without tokens maps to the zero vector.
///
/// `dim` must be a power of two no smaller than 2.
pub fn featurize(text: &str, dim: usize) -> FeatureVector {
    assert!(dim >= 2 && dim.is_power_of_two(), "feature dim must be a power of two >= 2, got {dim}");
    let mask = (dim - 1) as u64;
    let mut counts: Vec<(usize, f64)> = tokenize(text)
        .map(|tok| ((fnv1a64(tok.as_bytes()) & mask) as usize, 1.0))
        .collect();
    counts.sort_by_key(|&(i, _)| i);
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(counts.len());
    for (i, c) in counts {
        match entries.last_mut() {
            Some((j, w)) if *j == i => *w += c,
            _ => entries.push((i, c)),
        }
    }
    let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, w) in &mut entries {
            *w /= norm;
        }
    }
    FeatureVector { dim, entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_folding_collapses_to_one_index() {
        let v = featurize("The the THE", 1 << 10);
        assert_eq!(v.nnz(), 1);
        assert_eq!(v.entries()[0].1, 1.0);
    }

    #[test]
    fn deterministic() {
        let t = "Storms hit the coast; insurers brace for claims.";
        assert_eq!(featurize(t, 4096), featurize(t, 4096));
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let v = featurize("  ,,; -- ", 64);
        assert_eq!(v.nnz(), 0);
        assert_eq!(v.norm(), 0.0);
    }

    #[test]
    fn tokenizer_splits_on_non_alphanumeric_runs() {
        let toks: Vec<_> = tokenize("Héllo,,World--42 x").collect();
        assert_eq!(toks, vec!["héllo", "world", "42", "x"]);
    }

    #[test]
    fn counts_are_weighted_before_normalizing() {
        // "a a b" → counts (2, 1) unless the two tokens collide.
        let v = featurize("a a b", 1 << 20);
        assert_eq!(v.nnz(), 2);
        let mut w: Vec<f64> = v.entries().iter().map(|e| e.1).collect();
        w.sort_by(f64::total_cmp);
        assert!((w[0] - 1.0 / 5f64.sqrt()).abs() < 1e-15);
        assert!((w[1] - 2.0 / 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    #[should_panic]
    fn rejects_non_power_of_two() {
        featurize("x", 100);
    }
}
