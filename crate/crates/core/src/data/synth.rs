//! Synthetic two-domain corpora.
//!
//! Each in-distribution label owns a block of [`BLOCK_TOKENS`] tokens
//! (`l{label}t{i}`). The OOD corpus draws from its own block of the same
//! size, of which a fraction `overlap` is borrowed from the union of the
//! in-distribution blocks and the rest are fresh `oodt{i}` tokens.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, Document, LabelVocab, Provenance};

pub const BLOCK_TOKENS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_per_label: usize,
    pub labels: usize,
    pub overlap: f64,
    pub doc_len: usize,
    /// Size of the OOD corpus; defaults to `n_per_label`.
    pub n_ood: Option<usize>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_label: 200,
            labels: 4,
            overlap: 0.0,
            doc_len: 30,
            n_ood: None,
            seed: 1,
        }
    }
}

pub fn label_name(label: usize) -> String {
    format!("topic{label}")
}

fn label_block(label: usize) -> Vec<String> {
    (0..BLOCK_TOKENS).map(|i| format!("l{label}t{i}")).collect()
}

/// Generates `(in_dist, ood)`. OOD documents carry no labels.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Dataset, Dataset), DataError> {
    if !(0.0..=1.0).contains(&cfg.overlap) {
        return Err(DataError::Invalid(format!(
            "overlap must lie in [0, 1], got {}",
            cfg.overlap
        )));
    }
    if cfg.labels < 2 {
        return Err(DataError::Invalid(format!("need at least 2 labels, got {}", cfg.labels)));
    }
    if cfg.doc_len == 0 || cfg.n_per_label == 0 {
        return Err(DataError::Invalid("doc_len and n_per_label must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let blocks: Vec<Vec<String>> = (0..cfg.labels).map(label_block).collect();

    let borrowed = (cfg.overlap * BLOCK_TOKENS as f64).round() as usize;
    let union: Vec<&String> = blocks.iter().flatten().collect();
    let mut ood_block: Vec<String> = union
        .choose_multiple(&mut rng, borrowed)
        .map(|s| (*s).clone())
        .collect();
    ood_block.extend((0..BLOCK_TOKENS - borrowed).map(|i| format!("oodt{i}")));

    let mut docs = Vec::with_capacity(cfg.n_per_label * cfg.labels);
    for i in 0..cfg.n_per_label {
        for (label, block) in blocks.iter().enumerate() {
            docs.push(Document {
                id: format!("synth-{}-{label}-{i}", cfg.seed),
                text: sample_text(&mut rng, block, cfg.doc_len),
                label: Some(label_name(label)),
            });
        }
    }
    docs.shuffle(&mut rng);

    let n_ood = cfg.n_ood.unwrap_or(cfg.n_per_label);
    let ood_docs = (0..n_ood)
        .map(|i| Document {
            id: format!("synth-{}-ood-{i}", cfg.seed),
            text: sample_text(&mut rng, &ood_block, cfg.doc_len),
            label: None,
        })
        .collect();

    let vocab = LabelVocab::new((0..cfg.labels).map(label_name).collect())?;
    let in_dist = Dataset::new(docs, vocab, Provenance::Generator { seed: cfg.seed, role: "in-dist" })?;
    let ood = Dataset::new(ood_docs, LabelVocab::default(), Provenance::Generator { seed: cfg.seed, role: "ood" })?;
    Ok((in_dist, ood))
}

fn sample_text(rng: &mut ChaCha8Rng, block: &[String], len: usize) -> String {
    let mut out = String::new();
    for k in 0..len {
        if k > 0 {
            out.push(' ');
        }
        out.push_str(block.choose(rng).expect("non-empty block"));
    }
    out
}

/// Distinct tokens used across a corpus.
pub fn token_set(ds: &Dataset) -> BTreeSet<String> {
    ds.documents()
        .iter()
        .flat_map(|d| super::featurize::tokenize(&d.text).collect::<Vec<_>>())
        .collect()
}
