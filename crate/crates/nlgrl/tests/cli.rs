//! End-to-end runs of the command-line tool on a tiny configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nlgrl::config::{ChannelSpec, CorpusSource, ExperimentConfig};
use nlgrl_core::nn::policy::PolicyConfig;

fn tiny(dir: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk("tiny");
    c.seeds = vec![4];
    c.output_dir = dir.join("out");
    c.corpus.source = CorpusSource::Synthetic { n: 120, grammar: None };
    c.corpus.train_frac = 0.8;
    c.corpus.test_frac = 0.2;
    c.nlu.train.epochs = 2;
    c.nlg.model = PolicyConfig { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, context: 96 };
    c.nlg.train.epochs = 1;
    c.ppo.iterations = 2;
    c.ppo.batch_size = 8;
    c.ppo.minibatch_size = 4;
    c.ppo.max_len = 16;
    c
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, cfg.to_toml()).unwrap();
    p
}

fn nlgrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlgrl")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = nlgrl(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn empty_corpus_generation_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gen");
    ok(&["gen-corpus", "--n", "0", "--out", s(&out)]);
    assert_eq!(std::fs::read_to_string(out.join("corpus.jsonl")).unwrap(), "");
    assert!(out.join("manifest.json").exists());
}

#[test]
fn finetune_without_a_generator_names_the_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("mle.ckpt");
    let out = nlgrl(&["finetune", "--nlg", s(&missing), "--nlu", "x", "--corpus", "y"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train-nlg"), "{err}");
}

#[test]
fn bad_override_is_a_usage_error() {
    let out = nlgrl(&["show-config", "--set", "ppo.no_such_field=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_field"));
    let out = nlgrl(&["show-config", "--set", "nlg.train.lr=-1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn staged_commands_chain_and_evaluation_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), &tiny(dir.path()));
    let c = s(&cfg_path);
    let work = dir.path().join("work");
    let w = |f: &str| work.join(f).to_str().unwrap().to_string();
    ok(&["gen-corpus", "--config", c, "--out", s(&work)]);
    ok(&["train-nlu", "--config", c, "--corpus", &w("corpus.jsonl"), "--out", s(&work)]);
    ok(&["train-nlg", "--config", c, "--corpus", &w("corpus.jsonl"), "--out", s(&work)]);
    ok(&["build-matrix", "--config", c, "--corpus", &w("corpus.jsonl"), "--target-wer", "0.2", "--out", s(&work)]);
    ok(&["corrupt-corpus", "--config", c, "--corpus", &w("corpus.jsonl"), "--matrix", &w("matrix.json"), "--out", s(&work)]);
    let log = ok(&["finetune", "--config", c, "--nlg", &w("mle.ckpt"), "--nlu", &w("nlu.ckpt"), "--corpus", &w("corpus.jsonl"), "--matrix", &w("matrix.json"), "--out", s(&work)]);
    assert_eq!(log.lines().filter(|l| l.starts_with("iter")).count(), 2);
    assert_eq!(std::fs::read_to_string(work.join("metrics.jsonl")).unwrap().lines().count(), 2);

    let eval = |label: &str| {
        ok(&["evaluate", "--config", c, "--nlg", &w("rl.ckpt"), "--nlu", &w("nlu.ckpt"), "--test", &w("corpus.jsonl"), "--matrix", &w("matrix.json"), "--label", label, "--out", s(&work)]);
        std::fs::read(work.join(format!("eval-{label}.json"))).unwrap()
    };
    assert_eq!(eval("a"), eval("b"));
    let manifest = std::fs::read_to_string(work.join("manifest.json")).unwrap();
    for cmd in ["gen-corpus", "train-nlu", "train-nlg", "build-matrix", "corrupt-corpus", "finetune", "evaluate"] {
        assert!(manifest.contains(&format!("\"{cmd}\"")), "manifest lacks {cmd}");
    }
}

#[test]
fn run_then_report_reproduces_the_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.channel = Some(ChannelSpec::TargetWer(0.2));
    let cfg_path = write_config(dir.path(), &cfg);
    ok(&["run", "--config", s(&cfg_path)]);
    let run = dir.path().join("out");
    let first = std::fs::read_to_string(run.join("report.jsonl")).unwrap();
    ok(&["report", "--run", s(&run)]);
    assert_eq!(std::fs::read_to_string(run.join("report.jsonl")).unwrap(), first);
    for f in ["nlu.ckpt", "mle.ckpt", "rl.ckpt", "matrix.json", "metrics.jsonl", "eval-mle.json", "eval-rl.json", "outcome.json"] {
        assert!(run.join("seed-4").join(f).exists(), "missing {f}");
    }
    assert!(std::fs::read_to_string(run.join("manifest.json")).unwrap().contains("complete"));
}
