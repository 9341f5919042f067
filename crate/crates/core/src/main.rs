use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use idil_ood::config::{Confidence, ExperimentConfig, OUT_DIR_ENV};
use idil_ood::data::SynthConfig;
use idil_ood::experiment::{self, RunError};
use idil_ood::losses::LossVariant;
use idil_ood::{audit, report};

/// Set to a file path to dump every input file the command opened.
const TRACE_ENV: &str = "IDIL_OOD_TRACE";

#[derive(Parser)]
#[command(name = "idil-ood", version, about = "Self-supervised OOD detection with an IDIL ranking loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic in-distribution corpus and an OOD corpus.
    Synth(SynthArgs),
    /// Train one model per seed on the in-distribution training split.
    Train(TrainArgs),
    /// Score trained models against every OOD source.
    Eval(EvalArgs),
    /// Train and evaluate across batch sizes.
    SweepBatch(SweepArgs),
    /// Max-softmax percentile curves for one checkpoint.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    labels: usize,
    /// Documents per label.
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    overlap: f64,
    #[arg(long, default_value_t = 30)]
    doc_len: usize,
    /// OOD corpus size (default: same as --n).
    #[arg(long)]
    n_ood: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainKnobs {
    #[arg(long)]
    loss: Option<LossVariant>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

impl TrainKnobs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(l) = self.loss {
            cfg.train.loss = l;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if self.lr.is_some() {
            cfg.train.lr = self.lr;
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Overrides,
    #[command(flatten)]
    knobs: TrainKnobs,
    #[arg(long)]
    batch_size: Option<usize>,
    /// OOD sample scored between epochs for validation curves.
    #[arg(long)]
    val_ood: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Overrides,
    /// Use negative Mahalanobis distance instead of max-softmax.
    #[arg(long)]
    mahalanobis: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Overrides,
    #[command(flatten)]
    knobs: TrainKnobs,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
    sizes: Vec<usize>,
    #[arg(long)]
    mahalanobis: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    in_dist: PathBuf,
    #[arg(long)]
    ood: PathBuf,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn env_out() -> Option<PathBuf> {
    std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn load_config(o: &Overrides) -> Result<ExperimentConfig, RunError> {
    let mut cfg = ExperimentConfig::load(&o.config)?;
    cfg.apply_env();
    if let Some(out) = &o.out {
        cfg.experiment.out_dir = out.clone();
    }
    if let Some(seeds) = &o.seeds {
        cfg.experiment.seeds = seeds.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Synth(a) => {
            let cfg = SynthConfig {
                n_per_label: a.n,
                labels: a.labels,
                overlap: a.overlap,
                doc_len: a.doc_len,
                n_ood: a.n_ood,
                seed: a.seed,
            };
            let out = a.out.or_else(env_out).unwrap_or_else(|| PathBuf::from("corpus"));
            let r = experiment::cmd_synth(&cfg, &out)?;
            println!("wrote {} ({} docs) and {} ({} docs)", r.in_dist.display(), r.n_in, r.ood.display(), r.n_ood);
        }
        Command::Train(a) => {
            let mut cfg = load_config(&a.common)?;
            a.knobs.apply(&mut cfg);
            if let Some(b) = a.batch_size {
                cfg.train.batch_size = b;
            }
            if a.val_ood.is_some() {
                cfg.data.val_ood = a.val_ood;
            }
            cfg.validate()?;
            for run in experiment::cmd_train(&cfg)? {
                let last = run.log.steps.last().map_or(f64::NAN, |s| s.loss);
                println!(
                    "seed {}: {} steps, final batch loss {last:.6} -> {}",
                    run.seed,
                    run.log.steps.len(),
                    run.dir.display()
                );
            }
        }
        Command::Eval(a) => {
            let mut cfg = load_config(&a.common)?;
            if a.mahalanobis {
                cfg.experiment.confidence = Confidence::Mahalanobis;
            }
            cfg.validate()?;
            let (path, rows) = experiment::cmd_eval(&cfg)?;
            print!("{}", report::render_report(&rows));
            eprintln!("wrote {}", path.display());
        }
        Command::SweepBatch(a) => {
            let mut cfg = load_config(&a.common)?;
            a.knobs.apply(&mut cfg);
            if a.mahalanobis {
                cfg.experiment.confidence = Confidence::Mahalanobis;
            }
            cfg.validate()?;
            let (path, rows) = experiment::cmd_sweep_batch(&cfg, &a.sizes)?;
            print!("{}", report::render_sweep(&rows));
            eprintln!("wrote {}", path.display());
        }
        Command::Analyze(a) => {
            let out = a.out.or_else(env_out).unwrap_or_else(|| PathBuf::from("."));
            let r = experiment::cmd_analyze(&a.checkpoint, &a.in_dist, &a.ood, a.bins, &out)?;
            println!(
                "threshold {:.6}; OOD fraction at or above: {:.4}",
                r.table.threshold, r.table.ood_mass_above
            );
            eprintln!("wrote {} and {}", r.csv.display(), r.svg.display());
        }
    }
    Ok(())
}

fn write_trace(path: &Path, trace: &[PathBuf]) {
    let text: String = trace.iter().map(|p| format!("{}\n", p.display())).collect();
    if let Err(e) = std::fs::write(path, text) {
        eprintln!("warning: cannot write access trace {}: {e}", path.display());
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let trace_path = std::env::var_os(TRACE_ENV).map(PathBuf::from);
    if trace_path.is_some() {
        audit::start();
    }
    let result = run(cli);
    if let Some(p) = trace_path {
        write_trace(&p, &audit::finish());
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
