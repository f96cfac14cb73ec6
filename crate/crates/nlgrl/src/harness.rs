//! The three-stage pipeline per seed (understanding model, maximum-likelihood
//! generator, fine-tuning), with evaluation of both generators and
//! aggregation across seeds.
//!
//! Every stage draws its randomness from `derive(seed, [stage tag])`, so a
//! stage's output depends only on the run seed and its own inputs.

use std::path::{Path, PathBuf};

use nlgrl_core::channel::{synth_noisy_pairs, ChannelError, CorruptionProfile, WerReport};
use nlgrl_core::corpus::grammar::{default_grammar, generate_synthetic, GrammarConfig, GrammarError};
use nlgrl_core::corpus::{filter_by_vocabulary, split, CorpusError};
use nlgrl_core::da::IdfTable;
use nlgrl_core::eval::{evaluate, EvalError, EvalItem, EvalOptions, EvalScores, GreedyRealizer};
use nlgrl_core::nn::train::{nlg_mle_train, nlu_train, TrainError};
use nlgrl_core::rl::{finetune, AbortReason, Finetuned, IterMetrics, RlError};
use nlgrl_core::seed::derive;
use nlgrl_core::text::{default_stopwords, WordList, WordListError};
use nlgrl_core::{ConfusionMatrix, Corpus, NluModel, PolicyModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{save_nlu, save_policy, CheckpointError};
use crate::config::{ChannelSpec, CorpusSection, CorpusSource, ExperimentConfig, NlgSection, NluSection, WordListSpec};
use crate::io::{self, IoError};
use crate::manifest::{Entry, Manifest, Status};
use crate::report::{EvalReport, ModelRow, ReportError};

/// Stage tags for seed derivation.
pub mod tag {
    pub const CORPUS: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const NLU: u64 = 3;
    pub const NLG: u64 = 4;
    pub const CHANNEL: u64 = 5;
    pub const FINETUNE: u64 = 6;
    pub const EVAL: u64 = 7;
}

/// Longest utterance decoded at evaluation time.
pub const EVAL_MAX_LEN: usize = 40;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    WordList(#[from] WordListError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
    #[error("a word list by level needs a synthetic corpus, whose grammar defines the levels")]
    LevelWithoutGrammar,
    #[error("the restricted-vocabulary filter left no training examples for the understanding model")]
    EmptyRestrictedCorpus,
    #[error("seed {seed}, stage {stage}: {source}")]
    Stage { seed: u64, stage: &'static str, source: Box<HarnessError> },
}

/// The grammar of a synthetic source, if any.
pub fn source_grammar(section: &CorpusSection) -> Result<Option<GrammarConfig>, HarnessError> {
    match &section.source {
        CorpusSource::Synthetic { grammar: None, .. } => Ok(Some(default_grammar())),
        CorpusSource::Synthetic { grammar: Some(p), .. } => Ok(Some(io::read_json(p)?)),
        CorpusSource::File { .. } => Ok(None),
    }
}

/// The full corpus for `seed`: generated, or read from file.
pub fn load_source(section: &CorpusSection, seed: u64) -> Result<Corpus, HarnessError> {
    match &section.source {
        CorpusSource::Synthetic { n, .. } => {
            let g = source_grammar(section)?.expect("synthetic source has a grammar");
            Ok(generate_synthetic(&g, *n, derive(seed, &[tag::CORPUS]))?)
        }
        CorpusSource::File { path } => Ok(io::load_corpus(path)?),
    }
}

/// Train and test splits; the test side is cut to `eval_limit`.
pub fn split_source(section: &CorpusSection, corpus: &Corpus, seed: u64) -> Result<(Corpus, Corpus), HarnessError> {
    let (train, mut test) = split(corpus, section.train_frac, section.test_frac, derive(seed, &[tag::SPLIT]))?;
    if let Some(k) = section.eval_limit {
        test.examples.truncate(k);
    }
    Ok((train, test))
}

pub fn resolve_wordlist(spec: &WordListSpec, grammar: Option<&GrammarConfig>) -> Result<WordList, HarnessError> {
    match spec {
        WordListSpec::Level(level) => Ok(grammar.ok_or(HarnessError::LevelWithoutGrammar)?.word_list(*level, &default_stopwords())?),
        WordListSpec::Path(p) => Ok(io::load_wordlist(p)?),
    }
}

/// Understanding model trained on `train`, restricted to in-list utterances when `wordlist` is given.
pub fn train_nlu(train: &Corpus, section: &NluSection, wordlist: Option<&WordList>, seed: u64) -> Result<(NluModel, Vec<f64>, usize), HarnessError> {
    let data = match wordlist {
        Some(wl) => filter_by_vocabulary(train, wl, &default_stopwords()),
        None => train.clone(),
    };
    if data.is_empty() {
        return Err(HarnessError::EmptyRestrictedCorpus);
    }
    let cfg = nlgrl_core::nn::train::TrainConfig { seed: derive(seed, &[tag::NLU]), ..section.train };
    let out = nlu_train(&data, section.model, &cfg)?;
    Ok((out.model, out.epoch_losses, data.len()))
}

pub fn train_nlg(train: &Corpus, section: &NlgSection, seed: u64) -> Result<(PolicyModel, Vec<f64>), HarnessError> {
    let cfg = nlgrl_core::nn::train::TrainConfig { seed: derive(seed, &[tag::NLG]), ..section.train };
    let out = nlg_mle_train(train, section.model, &cfg)?;
    Ok((out.model, out.epoch_losses))
}

/// A channel and, when synthesized, the pooled WER of the pairs it was estimated from.
#[derive(Debug, Clone)]
pub struct Channel {
    pub matrix: ConfusionMatrix,
    pub pairs_wer: Option<f64>,
}

pub fn build_channel(train: &Corpus, spec: &ChannelSpec, seed: u64) -> Result<Channel, HarnessError> {
    let profile = match spec {
        ChannelSpec::Matrix(p) => return Ok(Channel { matrix: io::load_matrix(p)?, pairs_wer: None }),
        ChannelSpec::TargetWer(w) => CorruptionProfile::with_target(*w),
        ChannelSpec::Profile(p) => p.clone(),
    };
    let pairs = synth_noisy_pairs(train, &profile, derive(seed, &[tag::CHANNEL]))?;
    let wer = WerReport::corpus(pairs.iter().map(|(c, n)| (c.as_slice(), n.as_slice())))?.wer;
    Ok(Channel { matrix: ConfusionMatrix::build(&pairs)?, pairs_wer: Some(wer) })
}

/// Fine-tunes `mle` against `nlu` over the acts of `train`.
pub fn run_finetune(
    mle: &PolicyModel,
    nlu: &NluModel,
    train: &Corpus,
    channel: Option<&ConfusionMatrix>,
    ppo: &nlgrl_core::rl::PpoConfig,
    seed: u64,
    on_iter: impl FnMut(&IterMetrics, &PolicyModel),
) -> Result<Finetuned, HarnessError> {
    let pool = train.das();
    let idf = IdfTable::build(pool.iter()).map_err(|_| CorpusError::EmptyCorpus)?;
    let cfg = nlgrl_core::rl::PpoConfig { seed: derive(seed, &[tag::FINETUNE]), ..*ppo };
    Ok(finetune(mle, nlu, &pool, &idf, channel, &cfg, on_iter)?)
}

/// Fails when the generator cannot spell the test acts or the understanding
/// model knows none of their intents.
pub fn check_vocabularies(policy: &PolicyModel, nlu: &NluModel, test: &Corpus) -> Result<(), HarnessError> {
    let mut intents = std::collections::BTreeSet::new();
    for t in test.iter().flat_map(|e| e.da.iter()) {
        let (intent, slot, _) = t.key();
        for name in [intent, slot] {
            if policy.vocab.get(name).is_none() {
                return Err(HarnessError::VocabularyMismatch(format!("the generator vocabulary lacks act token `{name}`")));
            }
        }
        intents.insert(intent.to_string());
    }
    if !intents.is_empty() && !nlu.labels.intents.iter().any(|i| intents.contains(i)) {
        return Err(HarnessError::VocabularyMismatch("the understanding model knows none of the test intents".into()));
    }
    Ok(())
}

/// Greedy closed-loop scores of `policy` against `nlu` on `test`.
pub fn run_evaluate(
    policy: &PolicyModel,
    nlu: &NluModel,
    test: &Corpus,
    channel: Option<&ConfusionMatrix>,
    wordlist: Option<&WordList>,
    seed: u64,
) -> Result<(EvalScores, Vec<EvalItem>), HarnessError> {
    check_vocabularies(policy, nlu, test)?;
    let stop = default_stopwords();
    let opts = EvalOptions { channel: channel.map(|m| (m, derive(seed, &[tag::EVAL]))), wordlist: wordlist.map(|w| (w, &stop)) };
    Ok(evaluate(&GreedyRealizer { model: policy, max_len: EVAL_MAX_LEN }, nlu, test, opts)?)
}

/// Everything one seed produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub mle: EvalScores,
    pub rl: EvalScores,
    pub metrics: Vec<IterMetrics>,
    pub aborted: Option<AbortReason>,
    pub nlu_train_size: usize,
    pub channel_pairs_wer: Option<f64>,
}

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

fn stage<T>(seed: u64, stage: &'static str, r: Result<T, HarnessError>) -> Result<T, HarnessError> {
    r.map_err(|e| HarnessError::Stage { seed, stage, source: Box::new(e) })
}

fn write_items(path: &Path, items: &[EvalItem]) -> Result<(), HarnessError> {
    Ok(io::write_jsonl(path, items)?)
}

/// Runs every stage for one seed, writing artifacts into `dir` as each completes.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedOutcome, HarnessError> {
    let grammar = stage(seed, "corpus", source_grammar(&cfg.corpus))?;
    let corpus = stage(seed, "corpus", load_source(&cfg.corpus, seed))?;
    let (train, test) = stage(seed, "corpus", split_source(&cfg.corpus, &corpus, seed))?;
    stage(seed, "corpus", io::save_corpus(&train, &dir.join("train.jsonl")).and_then(|_| io::save_corpus(&test, &dir.join("test.jsonl"))).map_err(Into::into))?;

    let wordlist = cfg.nlu.wordlist.as_ref().map(|w| resolve_wordlist(w, grammar.as_ref())).transpose();
    let wordlist = stage(seed, "nlu", wordlist)?;
    if let Some(wl) = &wordlist {
        stage(seed, "nlu", io::save_wordlist(wl, &dir.join("wordlist.txt")).map_err(Into::into))?;
    }
    let (nlu, nlu_losses, nlu_train_size) = stage(seed, "nlu", train_nlu(&train, &cfg.nlu, wordlist.as_ref(), seed))?;
    stage(seed, "nlu", save_nlu(&nlu, &dir.join("nlu.ckpt")).map_err(Into::into))?;
    log::info!("seed {seed}: understanding model losses {nlu_losses:?}");

    let (mle, mle_losses) = stage(seed, "nlg", train_nlg(&train, &cfg.nlg, seed))?;
    stage(seed, "nlg", save_policy(&mle, &dir.join("mle.ckpt")).map_err(Into::into))?;
    log::info!("seed {seed}: generator losses {mle_losses:?}");

    let channel = cfg.channel.as_ref().map(|c| build_channel(&train, c, seed)).transpose();
    let channel = stage(seed, "channel", channel)?;
    if let Some(c) = &channel {
        stage(seed, "channel", io::save_matrix(&c.matrix, &dir.join("matrix.json")).map_err(Into::into))?;
    }
    let matrix = channel.as_ref().map(|c| &c.matrix);

    let (mle_scores, items) = stage(seed, "evaluate", run_evaluate(&mle, &nlu, &test, matrix, wordlist.as_ref(), seed))?;
    stage(seed, "evaluate", io::write_json(&dir.join("eval-mle.json"), &mle_scores).map_err(Into::into))?;
    stage(seed, "evaluate", write_items(&dir.join("samples-mle.jsonl"), &items))?;

    let every = cfg.checkpoint_every;
    let mut ckpt_err: Option<HarnessError> = None;
    let on_iter = |m: &IterMetrics, p: &PolicyModel| {
        log::info!("seed {seed} iter {}: reward {:.4} f1 {:.4} kl {:.4}", m.iter, m.mean_reward, m.mean_f1, m.mean_kl);
        if every.is_some_and(|k| (m.iter + 1).is_multiple_of(k)) {
            if let Err(e) = save_policy(p, &dir.join(format!("rl-iter{:04}.ckpt", m.iter + 1))) {
                ckpt_err.get_or_insert(e.into());
            }
        }
    };
    let tuned = stage(seed, "finetune", run_finetune(&mle, &nlu, &train, matrix, &cfg.ppo, seed, on_iter))?;
    if let Some(e) = ckpt_err {
        return Err(HarnessError::Stage { seed, stage: "finetune", source: Box::new(e) });
    }
    stage(seed, "finetune", io::write_jsonl(&dir.join("metrics.jsonl"), &tuned.metrics).map_err(Into::into))?;
    stage(seed, "finetune", save_policy(&tuned.policy, &dir.join("rl.ckpt")).map_err(Into::into))?;

    let (rl_scores, items) = stage(seed, "evaluate", run_evaluate(&tuned.policy, &nlu, &test, matrix, wordlist.as_ref(), seed))?;
    stage(seed, "evaluate", io::write_json(&dir.join("eval-rl.json"), &rl_scores).map_err(Into::into))?;
    stage(seed, "evaluate", write_items(&dir.join("samples-rl.jsonl"), &items))?;

    let out = SeedOutcome {
        seed,
        mle: mle_scores,
        rl: rl_scores,
        metrics: tuned.metrics,
        aborted: tuned.aborted,
        nlu_train_size,
        channel_pairs_wer: channel.and_then(|c| c.pairs_wer),
    };
    stage(seed, "evaluate", io::write_json(&dir.join("outcome.json"), &out).map_err(Into::into))?;
    Ok(out)
}

/// Report rows for the baseline and the fine-tuned generator.
pub fn aggregate(condition: &str, outcomes: &[SeedOutcome]) -> Result<EvalReport, HarnessError> {
    let mle: Vec<(u64, EvalScores)> = outcomes.iter().map(|o| (o.seed, o.mle.clone())).collect();
    let rl: Vec<(u64, EvalScores)> = outcomes.iter().map(|o| (o.seed, o.rl.clone())).collect();
    Ok(EvalReport { rows: vec![ModelRow::new(condition, "mle", &mle)?, ModelRow::new(condition, "rl", &rl)?] })
}

pub fn write_report(dir: &Path, report: &EvalReport) -> Result<(), IoError> {
    io::write_atomic(&dir.join("report.jsonl"), report.to_jsonl().as_bytes())?;
    io::write_atomic(&dir.join("report.txt"), report.to_text().as_bytes())
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub report: EvalReport,
    pub seeds: Vec<SeedOutcome>,
}

fn run_seeds(cfg: &ExperimentConfig, root: &Path) -> Vec<Result<SeedOutcome, HarnessError>> {
    let jobs = cfg.jobs.max(1);
    let mut results = Vec::with_capacity(cfg.seeds.len());
    for chunk in cfg.seeds.chunks(jobs) {
        if jobs == 1 {
            results.extend(chunk.iter().map(|&s| run_seed(cfg, s, &seed_dir(root, s))));
            continue;
        }
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk.iter().map(|&s| scope.spawn(move || run_seed(cfg, s, &seed_dir(root, s)))).collect();
            results.extend(handles.into_iter().map(|h| h.join().expect("seed pipeline panicked")));
        });
    }
    results
}

/// Runs the full pipeline for every seed and aggregates the results.
///
/// Completed seeds keep their artifacts when another fails; the manifest
/// then records the failing stage.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    cfg.validate()?;
    let dir = cfg.output_path();
    let entry = |status| Entry {
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        inputs: vec![],
        artifacts: vec!["config.toml".into(), "report.jsonl".into(), "report.txt".into()],
        status,
    };
    io::write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    Manifest::record(&dir, "run", entry(Status::Running))?;
    let mut outcomes = Vec::with_capacity(cfg.seeds.len());
    for r in run_seeds(cfg, &dir) {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                let stage = match &e {
                    HarnessError::Stage { seed, stage, .. } => format!("seed {seed}: {stage}"),
                    _ => "run".to_string(),
                };
                Manifest::record(&dir, "run", entry(Status::Failed { stage, error: e.to_string() }))?;
                return Err(e);
            }
        }
    }
    let report = aggregate(&cfg.name, &outcomes)?;
    write_report(&dir, &report)?;
    Manifest::record(&dir, "run", entry(Status::Complete))?;
    Ok(ExperimentOutcome { dir, report, seeds: outcomes })
}
