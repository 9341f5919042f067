//! The experiment protocol behind each CLI subcommand.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! config.toml                 effective configuration
//! seed-<s>/checkpoint.json    model, label vocabulary, feature dim
//! seed-<s>/mahalanobis.json   Gaussian stats over training penultimate features
//! seed-<s>/train_log.csv      step,loss
//! seed-<s>/epochs.csv         per-epoch loss and validation metrics
//! seed-<s>/manifest.json      config hash, seed, version
//! report.csv                  eval rows (report-mahalanobis.csv for distance scores)
//! ```

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::{Confidence, ConfigError, ExperimentConfig};
use crate::data::{self, DataError, Dataset, FeatureVector, Format, LabelVocab, SynthConfig};
use crate::mahalanobis::{self, GaussianStats, MahalanobisError, Shrinkage};
use crate::metrics::{self, MetricsError, MetricsReport, PercentileTable, ScoreSet};
use crate::model::{Checkpoint, MlpClassifier, ModelError};
use crate::report;
use crate::trainer::{self, TrainError, TrainLog, ValidationRecord};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum RunError {
    /// Bad arguments, unreadable config or missing input files.
    #[error("{0}")]
    Usage(String),
    /// Data, training or evaluation failure.
    #[error("{0}")]
    Runtime(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) => EXIT_USAGE,
            RunError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Usage(e.to_string())
    }
}

impl From<DataError> for RunError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => RunError::Usage(e.to_string()),
            _ => RunError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for RunError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => RunError::Usage(e.to_string()),
            _ => RunError::Runtime(e.to_string()),
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for RunError {
            fn from(e: $t) -> Self {
                RunError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(ModelError, MetricsError, MahalanobisError, std::io::Error);

pub type Result<T> = std::result::Result<T, RunError>;

fn load_corpus(path: &Path) -> Result<Dataset> {
    Ok(data::load(path, Format::from_path(path))?)
}

fn corpus_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| RunError::Runtime(format!("cannot create {}: {e}", path.display())))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub in_dist: PathBuf,
    pub ood: PathBuf,
    pub n_in: usize,
    pub n_ood: usize,
}

pub fn cmd_synth(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthOutput> {
    let (ind, ood) = data::synth_generate(cfg).map_err(|e| RunError::Usage(e.to_string()))?;
    create_dir(out_dir)?;
    let out = SynthOutput {
        in_dist: out_dir.join("in_dist.jsonl"),
        ood: out_dir.join("ood.jsonl"),
        n_in: ind.len(),
        n_ood: ood.len(),
    };
    ind.write_jsonl(&out.in_dist)?;
    ood.write_jsonl(&out.ood)?;
    Ok(out)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub loss: String,
    pub crate_version: &'static str,
    pub n_train: usize,
    pub steps: usize,
    pub in_dist: String,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct TrainRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub log: TrainLog,
    pub checkpoint: Checkpoint,
}

/// Splits, featurizes and trains one model per seed. Only the
/// in-distribution corpus is read (plus `data.val_ood` when configured, which
/// is scored between epochs and never enters the loss).
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<TrainRun>> {
    let corpus = load_corpus(&cfg.data.in_dist)?;
    if !corpus.is_labeled() {
        return Err(RunError::Runtime(format!("{} is not fully labeled", cfg.data.in_dist.display())));
    }
    let val_ood = match &cfg.data.val_ood {
        Some(p) => Some(load_corpus(p)?.featurize(cfg.data.feature_dim)),
        None => None,
    };
    let out = &cfg.experiment.out_dir;
    create_dir(out)?;
    report::write_text(&out.join("config.toml"), &cfg.to_toml())?;

    cfg.experiment
        .seeds
        .iter()
        .map(|&seed| train_seed(cfg, &corpus, seed, &seed_dir(out, seed), val_ood.as_deref()))
        .collect()
}

fn train_seed(
    cfg: &ExperimentConfig,
    corpus: &Dataset,
    seed: u64,
    dir: &Path,
    val_ood: Option<&[FeatureVector]>,
) -> Result<TrainRun> {
    let split = data::split(corpus, seed)?;
    let dim = cfg.data.feature_dim;
    let feats = split.train.featurize(dim);
    let labels = split.train.label_indices()?;
    let tcfg = cfg.train_config(seed);
    let mut model = MlpClassifier::init(cfg.model_config(corpus.vocab().len(), seed))?;

    let val_feats = split.val.featurize(dim);
    let mut hook = |_epoch: usize, m: &MlpClassifier| -> std::result::Result<ValidationRecord, TrainError> {
        let ood = val_ood.expect("hook only installed with a validation OOD set");
        let s = msp_scores(m, &val_feats, ood).map_err(|e| TrainError::Config(e.to_string()))?;
        let r = metrics::ood_metrics(&s).map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(ValidationRecord { fpr95: r.fpr95, err: r.err, auroc: r.auroc, aupr: r.aupr })
    };
    let hook_ref: Option<&mut trainer::ValidationHook<'_>> =
        if val_ood.is_some() && !val_feats.is_empty() { Some(&mut hook) } else { None };

    let log = trainer::train(&mut model, &feats, &labels, &tcfg, hook_ref)?;
    if !model.is_finite() {
        return Err(RunError::Runtime(format!("seed {seed}: training diverged (non-finite parameters)")));
    }

    create_dir(dir)?;
    let checkpoint = Checkpoint::new(model, corpus.vocab().clone(), seed, tcfg.variant.to_string());
    checkpoint.save(&dir.join("checkpoint.json"))?;
    log.write_steps_csv(&dir.join("train_log.csv"))?;
    log.write_epochs_csv(&dir.join("epochs.csv"))?;

    let mut warnings = log.warnings.clone();
    let pred = checkpoint.model.predict_all(&feats, PREDICT_CHUNK)?;
    match mahalanobis::fit(&pred.penultimate, pred.hidden_dim, &labels, Shrinkage::Auto) {
        Ok(stats) => stats.save(&dir.join("mahalanobis.json"))?,
        Err(e) => {
            let msg = format!("mahalanobis stats not fitted: {e}");
            log::warn!("seed {seed}: {msg}");
            warnings.push(msg);
        }
    }

    let manifest = Manifest {
        config_hash: cfg.hash(),
        seed,
        loss: tcfg.variant.to_string(),
        crate_version: env!("CARGO_PKG_VERSION"),
        n_train: feats.len(),
        steps: log.steps.len(),
        in_dist: cfg.data.in_dist.display().to_string(),
        warnings,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    report::write_text(&dir.join("manifest.json"), &(json + "\n"))?;

    Ok(TrainRun { seed, dir: dir.to_path_buf(), log, checkpoint })
}

// ---------------------------------------------------------------- eval

fn msp_scores(model: &MlpClassifier, ind: &[FeatureVector], ood: &[FeatureVector]) -> Result<ScoreSet> {
    let k = model.config().num_labels;
    let pi = model.predict_all(ind, PREDICT_CHUNK)?;
    let po = model.predict_all(ood, PREDICT_CHUNK)?;
    Ok(ScoreSet::new(metrics::max_softmax(&pi.probs, k), metrics::max_softmax(&po.probs, k))?)
}

fn check_vocab(ck: &Checkpoint, data: &LabelVocab, source: &Path) -> Result<()> {
    if ck.labels != *data {
        return Err(RunError::Runtime(format!(
            "label vocabulary mismatch: checkpoint has {:?}, {} has {:?}",
            ck.labels.names(),
            source.display(),
            data.names()
        )));
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(RunError::Usage(format!("checkpoint {} not found; run `train` first", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

/// Scores for one trained model against one OOD corpus.
#[derive(Debug, Clone)]
pub struct EvalCell {
    pub scores: ScoreSet,
    pub accuracy: f64,
}

/// Everything needed to score a trained seed: checkpoint, test split and the
/// chosen confidence source.
pub struct SeedEvaluator {
    pub checkpoint: Checkpoint,
    test_feats: Vec<FeatureVector>,
    test_labels: Vec<usize>,
    confidence: Confidence,
    stats: Option<GaussianStats>,
}

impl SeedEvaluator {
    pub fn new(corpus: &Dataset, corpus_path: &Path, dir: &Path, confidence: Confidence) -> Result<Self> {
        let checkpoint = load_checkpoint(&dir.join("checkpoint.json"))?;
        check_vocab(&checkpoint, corpus.vocab(), corpus_path)?;
        let split = data::split(corpus, checkpoint.seed)?;
        let stats = match confidence {
            Confidence::MaxSoftmax => None,
            Confidence::Mahalanobis => {
                let p = dir.join("mahalanobis.json");
                if p.exists() {
                    Some(GaussianStats::load(&p)?)
                } else {
                    // older run without persisted stats: refit from the train split
                    let feats = split.train.featurize(checkpoint.feature_dim);
                    let pred = checkpoint.model.predict_all(&feats, PREDICT_CHUNK)?;
                    Some(mahalanobis::fit(&pred.penultimate, pred.hidden_dim, &split.train.label_indices()?, Shrinkage::Auto)?)
                }
            }
        };
        Ok(Self {
            test_feats: split.test.featurize(checkpoint.feature_dim),
            test_labels: split.test.label_indices()?,
            checkpoint,
            confidence,
            stats,
        })
    }

    fn confidences(&self, feats: &[FeatureVector]) -> Result<(Vec<f64>, Vec<f64>)> {
        let pred = self.checkpoint.model.predict_all(feats, PREDICT_CHUNK)?;
        let scores = match &self.stats {
            None => metrics::max_softmax(&pred.probs, pred.num_labels),
            Some(st) => st.confidences(&pred.penultimate)?,
        };
        Ok((scores, pred.probs))
    }

    pub fn evaluate(&self, ood: &[FeatureVector]) -> Result<EvalCell> {
        let (in_scores, probs) = self.confidences(&self.test_feats)?;
        let (ood_scores, _) = self.confidences(ood)?;
        let accuracy = metrics::accuracy(&probs, self.checkpoint.model.config().num_labels, &self.test_labels)?;
        Ok(EvalCell { scores: ScoreSet::new(in_scores, ood_scores)?, accuracy })
    }

    pub fn method(&self) -> String {
        format!("{}/{}", self.checkpoint.loss, self.confidence)
    }
}

pub fn report_file(confidence: Confidence) -> &'static str {
    match confidence {
        Confidence::MaxSoftmax => "report.csv",
        Confidence::Mahalanobis => "report-mahalanobis.csv",
    }
}

/// Per-seed rows (ordered by seed, then OOD source) followed by one mean row
/// per OOD source.
pub fn evaluate_runs(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<MetricsReport>> {
    if cfg.data.ood.is_empty() {
        return Err(RunError::Usage("evaluation needs at least one data.ood source".into()));
    }
    let corpus = load_corpus(&cfg.data.in_dist)?;
    let oods = cfg
        .data
        .ood
        .iter()
        .map(|p| Ok((corpus_name(p), load_corpus(p)?.featurize(cfg.data.feature_dim))))
        .collect::<Result<Vec<_>>>()?;
    let in_name = corpus_name(&cfg.data.in_dist);
    let confidence = cfg.experiment.confidence;

    let mut rows = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let ev = SeedEvaluator::new(&corpus, &cfg.data.in_dist, &seed_dir(out, seed), confidence)?;
        if ev.checkpoint.feature_dim != cfg.data.feature_dim {
            return Err(RunError::Runtime(format!(
                "checkpoint feature dim {} differs from config {}",
                ev.checkpoint.feature_dim, cfg.data.feature_dim
            )));
        }
        for (name, feats) in &oods {
            let cell = ev.evaluate(feats)?;
            let m = metrics::ood_metrics(&cell.scores)?;
            rows.push(MetricsReport::new(&in_name, name, &ev.method(), &seed.to_string(), m, Some(100.0 * cell.accuracy)));
        }
    }
    let means: Vec<MetricsReport> = oods
        .iter()
        .filter_map(|(name, _)| {
            let cell: Vec<MetricsReport> = rows.iter().filter(|r| &r.ood == name).cloned().collect();
            MetricsReport::mean(&cell)
        })
        .collect();
    rows.extend(means);
    Ok(rows)
}

/// Evaluates every seed in `out_dir` and writes the report CSV.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<(PathBuf, Vec<MetricsReport>)> {
    let out = &cfg.experiment.out_dir;
    let rows = evaluate_runs(cfg, out)?;
    let path = out.join(report_file(cfg.experiment.confidence));
    report::write_text(&path, &report::render_report(&rows))?;
    Ok((path, rows))
}

// ---------------------------------------------------------------- sweep

/// Trains and evaluates one model per (batch size, seed) under
/// `out_dir/batch-<b>/`, then writes `sweep-batch.csv`.
pub fn cmd_sweep_batch(cfg: &ExperimentConfig, sizes: &[usize]) -> Result<(PathBuf, Vec<(usize, MetricsReport)>)> {
    if sizes.is_empty() {
        return Err(RunError::Usage("no batch sizes given".into()));
    }
    if let Some(&b) = sizes.iter().find(|&&b| b < 2) {
        return Err(RunError::Usage(format!("batch size {b} < 2: IDIL needs document pairs")));
    }
    let root = cfg.experiment.out_dir.clone();
    let mut all = Vec::new();
    for &b in sizes {
        let mut sub = cfg.clone();
        sub.train.batch_size = b;
        sub.experiment.out_dir = root.join(format!("batch-{b}"));
        sub.validate()?;
        cmd_train(&sub)?;
        let rows = evaluate_runs(&sub, &sub.experiment.out_dir)?;
        all.extend(rows.into_iter().map(|r| (b, r)));
    }
    create_dir(&root)?;
    let path = root.join("sweep-batch.csv");
    report::write_text(&path, &report::render_sweep(&all))?;
    Ok((path, all))
}

// ---------------------------------------------------------------- analyze

#[derive(Debug)]
pub struct AnalyzeOutput {
    pub csv: PathBuf,
    pub svg: PathBuf,
    pub table: PercentileTable,
}

/// Max-softmax percentile curves for a checkpoint. The in-distribution side
/// uses the checkpoint seed's test split when the corpus is labeled, the
/// whole corpus otherwise.
pub fn cmd_analyze(checkpoint: &Path, in_dist: &Path, ood: &Path, bins: usize, out_dir: &Path) -> Result<AnalyzeOutput> {
    if bins < 2 {
        return Err(RunError::Usage(format!("bins must be >= 2, got {bins}")));
    }
    let ck = load_checkpoint(checkpoint)?;
    let corpus = load_corpus(in_dist)?;
    let in_docs = if corpus.is_labeled() && corpus.len() >= 10 {
        check_vocab(&ck, corpus.vocab(), in_dist)?;
        data::split(&corpus, ck.seed)?.test
    } else {
        corpus
    };
    let ood_feats = load_corpus(ood)?.featurize(ck.feature_dim);
    let scores = msp_scores(&ck.model, &in_docs.featurize(ck.feature_dim), &ood_feats)?;
    let table = metrics::percentile_table(&scores, bins)?;

    create_dir(out_dir)?;
    let csv = out_dir.join("percentile.csv");
    let svg = out_dir.join("percentile.svg");
    report::write_text(&csv, &report::render_percentiles(&table))?;
    let title = format!("{} vs {} ({})", corpus_name(in_dist), corpus_name(ood), ck.loss);
    report::write_text(&svg, &report::percentile_svg(&table, &title))?;
    Ok(AnalyzeOutput { csv, svg, table })
}
