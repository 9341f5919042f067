use std::path::Path;
use std::process::{Command, Output};

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idil-ood"))
        .args(args)
        .current_dir(dir)
        .env_remove("IDIL_OOD_OUT")
        .env_remove("IDIL_OOD_TRACE")
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn lines(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p).unwrap().lines().map(String::from).collect()
}

const CONFIG: &str = r#"
[data]
in_dist = "c/in_dist.jsonl"
ood = ["c/ood.jsonl", "c2/ood.jsonl"]
feature_dim = 1024

[train]
epochs = 2

[experiment]
seeds = [1, 2, 3]
out_dir = "runs"
"#;

fn setup(dir: &Path) {
    ok(&bin(dir, &["synth", "--labels", "3", "--n", "40", "--seed", "1", "--out", "c"]));
    ok(&bin(dir, &["synth", "--labels", "3", "--n", "40", "--seed", "2", "--out", "c2"]));
    std::fs::write(dir.join("cfg.toml"), CONFIG).unwrap();
}

#[test]
fn synth_counts_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&bin(d, &["synth", "--labels", "4", "--n", "200", "--overlap", "0.0", "--seed", "1", "--out", "a"]));
    ok(&bin(d, &["synth", "--labels", "4", "--n", "200", "--overlap", "0.0", "--seed", "1", "--out", "b"]));
    assert_eq!(lines(&d.join("a/in_dist.jsonl")).len(), 800);
    for f in ["in_dist.jsonl", "ood.jsonl"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap());
    }
    let bad = bin(d, &["synth", "--overlap", "1.5"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(!bad.stderr.is_empty());
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(bin(d, &["train", "--config", "nope.toml"]).status.code(), Some(2));
    assert_eq!(bin(d, &["frobnicate"]).status.code(), Some(2));
    std::fs::write(d.join("cfg.toml"), "[data]\nin_dist = \"missing.jsonl\"\n").unwrap();
    assert_eq!(bin(d, &["train", "--config", "cfg.toml"]).status.code(), Some(2));
    setup(d);
    assert_eq!(bin(d, &["sweep-batch", "--config", "cfg.toml", "--sizes", "1"]).status.code(), Some(2));
}

#[test]
fn train_eval_analyze_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    let trace = d.join("trace.txt");
    let o = Command::new(env!("CARGO_BIN_EXE_idil-ood"))
        .args(["train", "--config", "cfg.toml"])
        .current_dir(d)
        .env("IDIL_OOD_TRACE", &trace)
        .env_remove("IDIL_OOD_OUT")
        .output()
        .unwrap();
    ok(&o);
    let read = std::fs::read_to_string(&trace).unwrap();
    assert!(read.contains("in_dist.jsonl") && !read.contains("ood.jsonl"), "{read}");

    // 120 docs -> 96 train -> 6 batches of 16, two epochs
    let steps = lines(&d.join("runs/seed-1/train_log.csv"));
    assert_eq!(steps[0], "step,loss");
    assert_eq!(steps.len() - 1, 12);
    for f in ["checkpoint.json", "manifest.json", "epochs.csv", "mahalanobis.json"] {
        assert!(d.join("runs/seed-2").join(f).exists(), "{f}");
    }

    ok(&bin(d, &["eval", "--config", "cfg.toml"]));
    let report = lines(&d.join("runs/report.csv"));
    assert_eq!(report[0], "in_dist,ood,method,seed,fpr95,err,auroc,aupr,accuracy");
    assert_eq!(report.len() - 1, 3 * 2 + 2);
    assert_eq!(report.iter().filter(|l| l.contains(",mean,")).count(), 2);

    ok(&bin(d, &["eval", "--config", "cfg.toml", "--mahalanobis"]));
    let maha = lines(&d.join("runs/report-mahalanobis.csv"));
    assert_eq!(maha.len(), report.len());
    assert!(maha[1].contains("idil/mahalanobis"));

    ok(&bin(d, &["eval", "--config", "cfg.toml"]));
    assert_eq!(lines(&d.join("runs/report.csv")), report);

    ok(&bin(d, &["analyze", "--checkpoint", "runs/seed-1/checkpoint.json", "--in-dist", "c/in_dist.jsonl", "--ood", "c/ood.jsonl", "--bins", "10", "--out", "an"]));
    assert_eq!(lines(&d.join("an/percentile.csv")).len(), 12);
    assert!(d.join("an/percentile.svg").exists());
}

#[test]
fn losses_give_distinct_checkpoints_and_env_out_applies() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    ok(&bin(d, &["train", "--config", "cfg.toml", "--seeds", "1", "--epochs", "1", "--out", "idil"]));
    ok(&bin(d, &["train", "--config", "cfg.toml", "--seeds", "1", "--epochs", "1", "--loss", "ce", "--out", "ce"]));
    let a = std::fs::read(d.join("idil/seed-1/checkpoint.json")).unwrap();
    let b = std::fs::read(d.join("ce/seed-1/checkpoint.json")).unwrap();
    assert_ne!(a, b);

    let o = Command::new(env!("CARGO_BIN_EXE_idil-ood"))
        .args(["train", "--config", "cfg.toml", "--seeds", "1", "--epochs", "1"])
        .current_dir(d)
        .env("IDIL_OOD_OUT", d.join("from-env"))
        .output()
        .unwrap();
    ok(&o);
    assert_eq!(std::fs::read(d.join("from-env/seed-1/checkpoint.json")).unwrap(), a);
}

#[test]
fn vocabulary_mismatch_is_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    ok(&bin(d, &["train", "--config", "cfg.toml", "--seeds", "1", "--epochs", "1"]));
    ok(&bin(d, &["synth", "--labels", "5", "--n", "40", "--out", "c"]));
    assert_eq!(bin(d, &["eval", "--config", "cfg.toml", "--seeds", "1"]).status.code(), Some(3));
}

#[test]
fn sweep_writes_one_block_per_size() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    ok(&bin(d, &["sweep-batch", "--config", "cfg.toml", "--sizes", "4,8", "--seeds", "1,2", "--epochs", "1"]));
    let rows = lines(&d.join("runs/sweep-batch.csv"));
    assert!(rows[0].starts_with("batch_size,"));
    // per size: 2 seeds x 2 OOD sets + 2 means
    assert_eq!(rows.len() - 1, 2 * 6);
    assert!(d.join("runs/batch-8/seed-2/checkpoint.json").exists());
}
