//! Reference implementations shared by the integration tests and the
//! acceptance harness. Everything here is written independently of the
//! library code it checks: plain loops, no shared helpers.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use idil_ood::autodiff::Tape;
use idil_ood::config::ExperimentConfig;
use idil_ood::data::{featurize, FeatureVector};
use idil_ood::losses::{batch_loss, LossVariant};
use idil_ood::metrics::ScoreSet;
use idil_ood::model::{MlpClassifier, ModelConfig};
use idil_ood::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ------------------------------------------------------------ gradients

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so gradients that are exactly
/// zero compare on an absolute scale.
pub const FD_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

pub type OpFn = dyn for<'t> Fn(&'t Tape, &[Tensor<'t>]) -> Tensor<'t>;

/// Largest relative error between the tape gradient of `f` and a central
/// difference, over every coordinate of every input.
pub fn op_grad_error(inputs: &[(Vec<usize>, Vec<f64>)], f: &OpFn) -> f64 {
    let tape = Tape::new();
    let leaves: Vec<_> = inputs.iter().map(|(s, v)| tape.leaf(s.clone(), v.clone()).unwrap()).collect();
    f(&tape, &leaves).backward().unwrap();
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|t| t.grad_or_zero()).collect();

    let eval = |vals: &[Vec<f64>]| {
        let tape = Tape::new();
        let leaves: Vec<_> = inputs.iter().zip(vals).map(|((s, _), v)| tape.leaf(s.clone(), v.clone()).unwrap()).collect();
        f(&tape, &leaves).item()
    };
    let mut vals: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    let mut worst = 0.0f64;
    for i in 0..vals.len() {
        for j in 0..vals[i].len() {
            let x = vals[i][j];
            vals[i][j] = x + FD_STEP;
            let up = eval(&vals);
            vals[i][j] = x - FD_STEP;
            let down = eval(&vals);
            vals[i][j] = x;
            worst = worst.max(rel_err(analytic[i][j], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// Fixed pseudo-random weights so a tensor output collapses to a scalar with
/// every element contributing differently.
pub fn project<'t>(tape: &'t Tape, t: Tensor<'t>) -> Tensor<'t> {
    let shape = t.shape();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|k| 0.3 + ((k as f64) * 1.7 + 0.4).sin()).collect();
    t.mul(tape.leaf(shape, w).unwrap()).unwrap().sum()
}

pub fn uniform(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Values bounded away from zero, for kinked ops.
pub fn off_zero(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = r.random_range(0.05..2.0);
            if r.random_bool(0.5) { m } else { -m }
        })
        .collect()
}

/// `(name, inputs as (shape, values), scalar-valued function)`.
pub type OpCase = (&'static str, Vec<(Vec<usize>, Vec<f64>)>, Box<OpFn>);

/// One randomized case per named op.
pub fn op_cases(r: &mut ChaCha8Rng) -> Vec<OpCase> {
    let rows = r.random_range(1..=4);
    let cols = r.random_range(1..=4);
    let inner = r.random_range(1..=4);
    let m = |r: &mut ChaCha8Rng| (vec![rows, cols], uniform(r, rows * cols, -2.0, 2.0));
    let sel = (r.random_range(0..rows), r.random_range(0..cols));
    let c = r.random_range(-3.0..3.0);
    let dim = 6;
    let sparse: Vec<Vec<(usize, f64)>> = (0..rows)
        .map(|_| {
            let mut idx: Vec<usize> = (0..dim).filter(|_| r.random_bool(0.5)).collect();
            idx.dedup();
            idx.into_iter().map(|i| (i, r.random_range(-1.0..1.0))).collect()
        })
        .collect();

    vec![
        ("add", vec![m(r), m(r)], Box::new(|t: &Tape, x: &[Tensor]| project(t, x[0].add(x[1]).unwrap()))),
        ("sub", vec![m(r), m(r)], Box::new(|t: &Tape, x: &[Tensor]| project(t, x[0].sub(x[1]).unwrap()))),
        ("mul", vec![m(r), m(r)], Box::new(|t: &Tape, x: &[Tensor]| project(t, x[0].mul(x[1]).unwrap()))),
        ("neg", vec![m(r)], Box::new(|t: &Tape, x: &[Tensor]| project(t, x[0].neg()))),
        ("scale", vec![m(r)], Box::new(move |t: &Tape, x: &[Tensor]| project(t, x[0].scale(c)))),
        (
            "matmul",
            vec![(vec![rows, inner], uniform(r, rows * inner, -2.0, 2.0)), (vec![inner, cols], uniform(r, inner * cols, -2.0, 2.0))],
            Box::new(|t: &Tape, x: &[Tensor]| project(t, x[0].matmul(x[1]).unwrap())),
        ),
        (
            "add_row_bias",
            vec![m(r), (vec![cols], uniform(r, cols, -2.0, 2.0))],
            Box::new(|t: &Tape, x: &[Tensor]| project(t, x[0].add_row_bias(x[1]).unwrap())),
        ),
        (
            "relu",
            vec![(vec![rows, cols], off_zero(r, rows * cols))],
            Box::new(|t: &Tape, x: &[Tensor]| project(t, x[0].relu())),
        ),
        ("silu", vec![m(r)], Box::new(|t: &Tape, x: &[Tensor]| project(t, x[0].silu()))),
        (
            "log",
            vec![(vec![rows, cols], uniform(r, rows * cols, 0.1, 3.0))],
            Box::new(|t: &Tape, x: &[Tensor]| project(t, x[0].log())),
        ),
        ("softmax_rows", vec![m(r)], Box::new(|t: &Tape, x: &[Tensor]| project(t, x[0].softmax_rows().unwrap()))),
        ("sum", vec![m(r)], Box::new(|_: &Tape, x: &[Tensor]| x[0].sum().scale(1.3))),
        ("mean", vec![m(r)], Box::new(|_: &Tape, x: &[Tensor]| x[0].mean().silu())),
        (
            "select",
            vec![m(r)],
            Box::new(move |_: &Tape, x: &[Tensor]| x[0].select(sel.0, sel.1).unwrap().silu()),
        ),
        (
            "sparse_matmul",
            vec![(vec![dim, cols], uniform(r, dim * cols, -2.0, 2.0))],
            Box::new(move |t: &Tape, x: &[Tensor]| project(t, t.sparse_matmul(sparse.clone(), x[0]).unwrap())),
        ),
        (
            "sum_all",
            vec![m(r), m(r), m(r)],
            Box::new(|t: &Tape, x: &[Tensor]| project(t, t.sum_all(&[x[0], x[1], x[2], x[0]]).unwrap())),
        ),
    ]
}

// ------------------------------------------------------------ losses

/// `x·σ(x)`, straight from the definition.
pub fn silu(x: f64) -> f64 {
    x * (1.0 / (1.0 + (-x).exp()))
}

/// Triple-loop batch loss. `live` supplies the values that carry gradient
/// and `fixed` the detached ones; pass the same matrix twice for a plain
/// value.
pub fn naive_loss_mixed(live: &[f64], fixed: &[f64], width: usize, labels: &[usize], variant: LossVariant) -> f64 {
    let n = labels.len();
    let p = |m: &[f64], i: usize, l: usize| m[i * width + l];
    if variant == LossVariant::Ce {
        let mut s = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            s += p(live, i, y).ln();
        }
        return s * (-1.0 / n as f64);
    }
    let (min_src, sub_src) = match variant {
        LossVariant::IdilGradSub => (fixed, live),
        LossVariant::IdilGradBoth => (live, live),
        _ => (live, fixed),
    };
    let mut acc = 0.0;
    for l in 0..width {
        for x1 in 0..n {
            if labels[x1] != l {
                continue;
            }
            for x2 in 0..n {
                if labels[x2] == l {
                    continue;
                }
                let d = p(min_src, x2, l) - p(sub_src, x1, l);
                acc += if variant == LossVariant::IdilNoSilu { d } else { silu(d) };
            }
        }
    }
    if variant == LossVariant::IdilIntraDoc {
        for (x, &y) in labels.iter().enumerate() {
            for l in 0..width {
                if l != y {
                    acc += silu(p(live, x, l) - p(fixed, x, y));
                }
            }
        }
    }
    acc
}

pub fn naive_loss(probs: &[f64], width: usize, labels: &[usize], variant: LossVariant) -> f64 {
    naive_loss_mixed(probs, probs, width, labels, variant)
}

pub fn naive_pair_count(labels: &[usize], width: usize) -> usize {
    (0..width)
        .map(|l| {
            let inside = labels.iter().filter(|&&y| y == l).count();
            inside * (labels.len() - inside)
        })
        .sum()
}

pub fn random_probs(r: &mut ChaCha8Rng, rows: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * width);
    for _ in 0..rows {
        let e: Vec<f64> = (0..width).map(|_| r.random_range(-3.0f64..3.0).exp()).collect();
        let z: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / z));
    }
    out
}

pub fn random_labels(r: &mut ChaCha8Rng, n: usize, width: usize) -> Vec<usize> {
    (0..n).map(|_| r.random_range(0..width)).collect()
}

/// Small randomized model plus a batch, for gradient checks through the
/// full forward pass.
pub struct ModelCase {
    pub model: MlpClassifier,
    pub feats: Vec<FeatureVector>,
    pub labels: Vec<usize>,
}

pub fn model_case(r: &mut ChaCha8Rng) -> ModelCase {
    let width = r.random_range(2..=4);
    let cfg = ModelConfig { input_dim: 16, hidden_dim: 5, num_labels: width, init_seed: r.random() };
    loop {
        let mut model = MlpClassifier::init(cfg).unwrap();
        for p in model.params_mut() {
            for v in &mut p.values {
                *v = r.random_range(-0.8..0.8);
            }
        }
        let n = r.random_range(2..=8);
        let feats: Vec<FeatureVector> = (0..n)
            .map(|_| {
                let words: Vec<String> = (0..r.random_range(1..6)).map(|_| format!("w{}", r.random_range(0..40))).collect();
                featurize(&words.join(" "), 16)
            })
            .collect();
        let labels = random_labels(r, n, width);
        // keep hidden pre-activations off the ReLU kink
        let w1 = &model.params()[0].values;
        let b1 = &model.params()[1].values;
        let near_kink = feats.iter().any(|fv| {
            (0..5).any(|h| {
                let pre: f64 = b1[h] + fv.entries().iter().map(|&(i, x)| x * w1[i * 5 + h]).sum::<f64>();
                pre.abs() < 1e-3
            })
        });
        if !near_kink {
            return ModelCase { model, feats, labels };
        }
    }
}

/// Parameter gradients of `batch_loss` via the tape, flattened in parameter
/// order.
pub fn tape_param_grads(case: &ModelCase, variant: LossVariant) -> Vec<f64> {
    let tape = Tape::new();
    let fwd = case.model.forward(&tape, &case.feats).unwrap();
    let loss = batch_loss(&tape, fwd.probs, &case.labels, variant).unwrap();
    loss.backward().unwrap();
    fwd.params.iter().flat_map(|p| p.grad_or_zero()).collect()
}

/// Max relative error between tape gradients and a central difference of
/// the triple-loop loss, with detached quantities held at their base value.
pub fn model_grad_error(case: &ModelCase, variant: LossVariant) -> f64 {
    let analytic = tape_param_grads(case, variant);
    let width = case.model.config().num_labels;
    let base = case.model.predict(&case.feats).unwrap().probs;
    let mut model = case.model.clone();
    let mut worst = 0.0f64;
    let mut k = 0;
    for pi in 0..model.params().len() {
        for j in 0..model.params()[pi].values.len() {
            let x = model.params()[pi].values[j];
            let at = |v: f64, model: &mut MlpClassifier| {
                model.params_mut()[pi].values[j] = v;
                let live = model.predict(&case.feats).unwrap().probs;
                naive_loss_mixed(&live, &base, width, &case.labels, variant)
            };
            let up = at(x + FD_STEP, &mut model);
            let down = at(x - FD_STEP, &mut model);
            model.params_mut()[pi].values[j] = x;
            worst = worst.max(rel_err(analytic[k], (up - down) / (2.0 * FD_STEP)));
            k += 1;
        }
    }
    worst
}

/// IDIL gradients rebuilt from scratch: the GradBoth graph with every
/// subtrahend replaced by a constant leaf, so no gradient can reach it.
pub fn manual_idil_grads(case: &ModelCase) -> Vec<f64> {
    let tape = Tape::new();
    let fwd = case.model.forward(&tape, &case.feats).unwrap();
    let width = case.model.config().num_labels;
    let values = fwd.probs.values();
    let mut terms = Vec::new();
    for l in 0..width {
        for x1 in 0..case.labels.len() {
            if case.labels[x1] != l {
                continue;
            }
            let sub = tape.scalar(values[x1 * width + l]);
            for x2 in 0..case.labels.len() {
                if case.labels[x2] != l {
                    terms.push(fwd.probs.select(x2, l).unwrap().sub(sub).unwrap().silu());
                }
            }
        }
    }
    if !terms.is_empty() {
        tape.sum_all(&terms).unwrap().backward().unwrap();
    }
    fwd.params.iter().flat_map(|p| p.grad_or_zero()).collect()
}

// ------------------------------------------------------------ metrics

/// Pairwise AUROC: wins count 1, ties 1/2.
pub fn brute_auroc(s: &ScoreSet) -> f64 {
    let mut twice = 0u64;
    for &a in &s.in_scores {
        for &b in &s.ood_scores {
            twice += if a > b { 2 } else if a == b { 1 } else { 0 };
        }
    }
    twice as f64 / (2 * s.in_scores.len() * s.ood_scores.len()) as f64
}

/// `(TPR, FPR)` for every threshold the data can realize: accept-nothing,
/// and `score >= v` for each observed value `v`.
pub fn exhaustive_points(s: &ScoreSet) -> Vec<(f64, f64)> {
    let rate = |v: &[f64], keep: &dyn Fn(f64) -> bool| v.iter().filter(|&&x| keep(x)).count() as f64 / v.len() as f64;
    let mut pts = vec![(0.0, 0.0)];
    for &t in s.in_scores.iter().chain(&s.ood_scores) {
        pts.push((rate(&s.in_scores, &|x| x >= t), rate(&s.ood_scores, &|x| x >= t)));
        pts.push((rate(&s.in_scores, &|x| x > t), rate(&s.ood_scores, &|x| x > t)));
    }
    pts
}

pub fn brute_fpr_at(s: &ScoreSet, tpr: f64) -> f64 {
    exhaustive_points(s).into_iter().filter(|p| p.0 >= tpr).map(|p| p.1).fold(f64::INFINITY, f64::min)
}

pub fn brute_detection_error(s: &ScoreSet) -> f64 {
    exhaustive_points(s)
        .into_iter()
        .map(|(tpr, fpr)| 0.5 * (1.0 - tpr) + 0.5 * fpr)
        .fold(f64::INFINITY, f64::min)
}

/// Average precision by walking the ranking from the top. Within a tied
/// score, negatives are ranked first.
pub fn rank_walk_ap(s: &ScoreSet) -> f64 {
    let mut items: Vec<(f64, bool)> = s.in_scores.iter().map(|&x| (x, true)).chain(s.ood_scores.iter().map(|&x| (x, false))).collect();
    items.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let (mut tp, mut total) = (0usize, 0.0);
    for (rank, &(_, pos)) in items.iter().enumerate() {
        if pos {
            tp += 1;
            total += tp as f64 / (rank + 1) as f64;
        }
    }
    total / s.in_scores.len() as f64
}

/// Random score sets up to 50 per side, half of them on a coarse grid so
/// ties are common.
pub fn random_score_set(r: &mut ChaCha8Rng) -> ScoreSet {
    let coarse = r.random_bool(0.5);
    let shift = if coarse { 0.125 } else { 0.2 };
    let n_in = r.random_range(1..=50);
    let n_ood = r.random_range(1..=50);
    let mut draw = |n: usize, shift: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                if coarse {
                    (r.random_range(0..8) as f64) / 8.0 + shift
                } else {
                    r.random_range(0.0..1.0) + shift
                }
            })
            .collect()
    };
    let ins = draw(n_in, shift);
    let oods = draw(n_ood, 0.0);
    ScoreSet::new(ins, oods).unwrap()
}

// ------------------------------------------------------------ end to end

pub const SYNTH_CONFIG: &str = r#"
[data]
in_dist = "corpus/in_dist.jsonl"
ood = ["corpus/ood.jsonl"]
"#;

/// Writes the synthetic corpus used by the end-to-end checks (4 labels,
/// 200 docs per label, disjoint vocabularies, seed 1) under `dir/corpus`.
pub fn write_synth(dir: &Path) {
    let cfg = idil_ood::data::SynthConfig { n_per_label: 200, labels: 4, overlap: 0.0, seed: 1, ..Default::default() };
    idil_ood::experiment::cmd_synth(&cfg, &dir.join("corpus")).unwrap();
}

/// Default training settings with the given loss and seeds, outputs under
/// `dir/<out>`.
pub fn e2e_config(dir: &Path, loss: LossVariant, seeds: &[u64], out: &str) -> ExperimentConfig {
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let text = format!(
        "{SYNTH_CONFIG}[train]\nloss = \"{}\"\n[experiment]\nseeds = [{}]\nout_dir = \"{out}\"\n",
        loss.as_str(),
        seeds.join(", ")
    );
    ExperimentConfig::parse(&text, dir).unwrap()
}

pub fn corpus_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("corpus/in_dist.jsonl"), dir.join("corpus/ood.jsonl"))
}
