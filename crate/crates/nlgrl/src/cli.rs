//! Command-line front end. Each subcommand reads the stage settings it needs
//! from the experiment config and writes its artifacts plus a manifest entry.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nlgrl_core::channel::{corrupt, synth_noisy_pairs, CorruptionProfile, TokenPair, WerReport};
use nlgrl_core::corpus::grammar::generate_synthetic;
use nlgrl_core::seed::{child_rng, derive};
use nlgrl_core::ConfusionMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{load_nlu, load_policy, save_nlu, save_policy};
use crate::config::{ChannelSpec, ConfigError, CorpusSource, ExperimentConfig, Preset, WordListSpec};
use crate::harness::{self, tag, HarnessError, SeedOutcome};
use crate::io;
use crate::manifest::{Entry, Manifest, Status};
use crate::report::{EvalReport, ModelRow};

#[derive(Debug, Parser)]
#[command(name = "nlgrl", version, about = "Fine-tune a dialogue-act-to-text generator so an understanding model recovers its acts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in preset used when no config file is given.
    #[arg(long, global = true, value_parser = Preset::NAMES)]
    pub preset: Option<String>,
    /// Override a config field, e.g. `--set ppo.iterations=60`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus from the template grammar.
    GenCorpus {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the understanding model.
    TrainNlu {
        #[arg(long)]
        corpus: PathBuf,
        /// Word list restricting the training utterances (overrides the config).
        #[arg(long)]
        wordlist: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the generator by maximum likelihood.
    TrainNlg {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Corrupt a corpus's utterances, writing clean/noisy pairs.
    CorruptCorpus {
        #[arg(long)]
        corpus: PathBuf,
        /// Use this matrix instead of synthesizing a channel.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        target_wer: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Estimate a confusion matrix from clean/noisy pairs, or synthesize one from a corpus.
    BuildMatrix {
        #[arg(long, conflicts_with = "corpus")]
        pairs: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        target_wer: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fine-tune a maximum-likelihood generator against an understanding model.
    Finetune {
        #[arg(long)]
        nlg: PathBuf,
        #[arg(long)]
        nlu: PathBuf,
        /// Corpus whose acts are sampled for rollouts.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a generator against an understanding model on a test corpus.
    Evaluate {
        #[arg(long)]
        nlg: PathBuf,
        #[arg(long)]
        nlu: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        wordlist: Option<PathBuf>,
        /// Row name in the report.
        #[arg(long, default_value = "nlg")]
        label: String,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Aggregate the per-seed outcomes of a finished run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Run the whole pipeline for every configured seed.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print a preset as TOML.
    ShowConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(#[from] ConfigError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("finetune needs a generator pre-trained by maximum likelihood; run `train-nlg` first (no checkpoint at {})", .0.display())]
    MissingMle(PathBuf),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    /// 2 for usage errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Invalid(_) => 2,
            _ => 1,
        }
    }
}

fn h<T, E: Into<HarnessError>>(r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Harness(e.into()))
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let preset = self.preset.as_deref().map(Preset::parse).transpose()?;
        let cfg = ExperimentConfig::load(self.config.as_deref(), preset, &self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| cfg.output_path())
    }
}

fn record(dir: &Path, command: &str, cfg: &ExperimentConfig, seed: u64, inputs: &[&Path], artifacts: &[&str]) -> Result<(), CliError> {
    let entry = Entry {
        config_hash: cfg.hash(),
        seeds: vec![seed],
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
        status: Status::Complete,
    };
    h(Manifest::record(dir, command, entry))
}

/// One clean/noisy line of a pairs file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub clean: Vec<String>,
    pub noisy: Vec<String>,
}

fn load_pairs(path: &Path) -> Result<Vec<TokenPair>, CliError> {
    let text = h(io::read_text(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            serde_json::from_str::<Pair>(l)
                .map(|p| (p.clean, p.noisy))
                .map_err(|e| CliError::Invalid(format!("{}:{}: {e}", path.display(), k + 1)))
        })
        .collect()
}

fn pooled_wer(pairs: &[(Vec<String>, Vec<String>)]) -> Result<f64, CliError> {
    Ok(h(WerReport::corpus(pairs.iter().map(|(c, n)| (c.as_slice(), n.as_slice()))))?.wer)
}

fn profile(cfg: &ExperimentConfig, target: Option<f64>) -> Result<CorruptionProfile, CliError> {
    match (target, &cfg.channel) {
        (Some(w), _) | (None, &Some(ChannelSpec::TargetWer(w))) => Ok(CorruptionProfile::with_target(w)),
        (None, Some(ChannelSpec::Profile(p))) => Ok(p.clone()),
        _ => Err(CliError::Invalid("no channel to synthesize: pass --target-wer or configure `channel`".into())),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenCorpus { n, seed, cfg: args } => {
            let cfg = args.load()?;
            let (default_n, grammar) = match &cfg.corpus.source {
                CorpusSource::Synthetic { n, .. } => (*n, h(harness::source_grammar(&cfg.corpus))?.expect("synthetic")),
                CorpusSource::File { .. } => (0, nlgrl_core::corpus::grammar::default_grammar()),
            };
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let corpus = h(generate_synthetic(&grammar, n.unwrap_or(default_n), derive(seed, &[tag::CORPUS])))?;
            let dir = args.out(&cfg);
            h(io::save_corpus(&corpus, &dir.join("corpus.jsonl")))?;
            record(&dir, "gen-corpus", &cfg, seed, &[], &["corpus.jsonl"])?;
            println!("wrote {} examples to {}", corpus.len(), dir.join("corpus.jsonl").display());
        }
        Command::TrainNlu { corpus, wordlist, seed, cfg: args } => {
            let cfg = args.load()?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let train = h(io::load_corpus(&corpus))?;
            let list = match &wordlist {
                Some(p) => Some(h(io::load_wordlist(p))?),
                None => h(config_wordlist(&cfg))?,
            };
            let (model, losses, n) = h(harness::train_nlu(&train, &cfg.nlu, list.as_ref(), seed))?;
            let dir = args.out(&cfg);
            h(save_nlu(&model, &dir.join("nlu.ckpt")))?;
            record(&dir, "train-nlu", &cfg, seed, &[&corpus], &["nlu.ckpt"])?;
            println!("trained on {n} examples; epoch losses {losses:.4?}");
        }
        Command::TrainNlg { corpus, seed, cfg: args } => {
            let cfg = args.load()?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let train = h(io::load_corpus(&corpus))?;
            let (model, losses) = h(harness::train_nlg(&train, &cfg.nlg, seed))?;
            let dir = args.out(&cfg);
            h(save_policy(&model, &dir.join("mle.ckpt")))?;
            record(&dir, "train-nlg", &cfg, seed, &[&corpus], &["mle.ckpt"])?;
            println!("epoch losses {losses:.4?}");
        }
        Command::CorruptCorpus { corpus, matrix, target_wer, seed, cfg: args } => {
            let cfg = args.load()?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let clean = h(io::load_corpus(&corpus))?;
            let matrix = match (&matrix, &cfg.channel, target_wer) {
                (Some(p), _, _) | (None, Some(ChannelSpec::Matrix(p)), None) => Some(h(io::load_matrix(p))?),
                _ => None,
            };
            let pairs: Vec<TokenPair> = match &matrix {
                Some(m) => {
                    let s = derive(seed, &[tag::CHANNEL]);
                    clean.iter().enumerate().map(|(k, e)| {
                        let c = e.tokens();
                        let n = corrupt(&c, m, &mut child_rng(s, &[k as u64]));
                        (c, n)
                    }).collect()
                }
                None => h(synth_noisy_pairs(&clean, &profile(&cfg, target_wer)?, derive(seed, &[tag::CHANNEL])))?,
            };
            let rows: Vec<Pair> = pairs.iter().map(|(c, n)| Pair { clean: c.clone(), noisy: n.clone() }).collect();
            let dir = args.out(&cfg);
            h(io::write_jsonl(&dir.join("pairs.jsonl"), &rows))?;
            record(&dir, "corrupt-corpus", &cfg, seed, &[&corpus], &["pairs.jsonl"])?;
            if !pairs.is_empty() {
                println!("pooled WER {:.4} over {} utterances", pooled_wer(&pairs)?, pairs.len());
            }
        }
        Command::BuildMatrix { pairs, corpus, target_wer, seed, cfg: args } => {
            let cfg = args.load()?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let (pairs, input) = match (pairs, corpus) {
                (Some(p), _) => (load_pairs(&p)?, p),
                (None, Some(c)) => {
                    let clean = h(io::load_corpus(&c))?;
                    (h(synth_noisy_pairs(&clean, &profile(&cfg, target_wer)?, derive(seed, &[tag::CHANNEL])))?, c)
                }
                (None, None) => return Err(CliError::Invalid("build-matrix needs --pairs or --corpus".into())),
            };
            let m = h(ConfusionMatrix::build(&pairs))?;
            let dir = args.out(&cfg);
            h(io::save_matrix(&m, &dir.join("matrix.json")))?;
            record(&dir, "build-matrix", &cfg, seed, &[&input], &["matrix.json"])?;
            println!("matrix over {} words; pairs WER {:.4}", m.vocab().len() - 1, pooled_wer(&pairs)?);
        }
        Command::Finetune { nlg, nlu, corpus, matrix, seed, cfg: args } => {
            if !nlg.exists() {
                return Err(CliError::MissingMle(nlg));
            }
            let cfg = args.load()?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let mle = h(load_policy(&nlg))?;
            let understander = h(load_nlu(&nlu))?;
            let train = h(io::load_corpus(&corpus))?;
            let m = matrix.as_deref().map(io::load_matrix).transpose();
            let m = h(m)?;
            let dir = args.out(&cfg);
            let every = cfg.checkpoint_every;
            let mut failed = None;
            let tuned = h(harness::run_finetune(&mle, &understander, &train, m.as_ref(), &cfg.ppo, seed, |it, p| {
                println!("iter {:>4}  reward {:.4}  f1 {:.4}  kl {:.4}", it.iter, it.mean_reward, it.mean_f1, it.mean_kl);
                if every.is_some_and(|k| (it.iter + 1).is_multiple_of(k)) {
                    if let Err(e) = save_policy(p, &dir.join(format!("rl-iter{:04}.ckpt", it.iter + 1))) {
                        failed.get_or_insert(e);
                    }
                }
            }))?;
            if let Some(e) = failed {
                return h(Err(e));
            }
            h(io::write_jsonl(&dir.join("metrics.jsonl"), &tuned.metrics))?;
            h(save_policy(&tuned.policy, &dir.join("rl.ckpt")))?;
            let mut inputs: Vec<&Path> = vec![&nlg, &nlu, &corpus];
            inputs.extend(matrix.as_deref());
            record(&dir, "finetune", &cfg, seed, &inputs, &["rl.ckpt", "metrics.jsonl"])?;
            if let Some(a) = tuned.aborted {
                eprintln!("fine-tuning stopped early: {a:?}; kept the last good policy");
            }
        }
        Command::Evaluate { nlg, nlu, test, matrix, wordlist, label, seed, cfg: args } => {
            let cfg = args.load()?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let policy = h(load_policy(&nlg))?;
            let understander = h(load_nlu(&nlu))?;
            let test_set = h(io::load_corpus(&test))?;
            let m = h(matrix.as_deref().map(io::load_matrix).transpose())?;
            let wl = h(wordlist.as_deref().map(io::load_wordlist).transpose())?;
            let (scores, items) = h(harness::run_evaluate(&policy, &understander, &test_set, m.as_ref(), wl.as_ref(), seed))?;
            let dir = args.out(&cfg);
            let file = format!("eval-{label}.json");
            h(io::write_json(&dir.join(&file), &scores))?;
            h(io::write_jsonl(&dir.join(format!("samples-{label}.jsonl")), &items))?;
            let report = EvalReport { rows: vec![h(ModelRow::new(&cfg.name, &label, &[(seed, scores)]))?] };
            h(harness::write_report(&dir, &report))?;
            let mut inputs: Vec<&Path> = vec![&nlg, &nlu, &test];
            inputs.extend(matrix.as_deref());
            inputs.extend(wordlist.as_deref());
            record(&dir, "evaluate", &cfg, seed, &inputs, &[&file, "report.jsonl", "report.txt"])?;
            print!("{}", report.to_text());
        }
        Command::Report { run } => {
            let cfg: ExperimentConfig = {
                let text = h(io::read_text(&run.join("config.toml")))?;
                ExperimentConfig::from_table(text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?)?
            };
            let mut outcomes = Vec::new();
            for &s in &cfg.seeds {
                let path = harness::seed_dir(&run, s).join("outcome.json");
                if path.exists() {
                    outcomes.push(h(io::read_json::<SeedOutcome>(&path))?);
                }
            }
            if outcomes.is_empty() {
                return Err(CliError::Invalid(format!("no finished seeds under {}", run.display())));
            }
            let report = h(harness::aggregate(&cfg.name, &outcomes))?;
            h(harness::write_report(&run, &report))?;
            print!("{}", report.to_text());
        }
        Command::Run { cfg: args } => {
            let mut cfg = args.load()?;
            if let Some(out) = args.out {
                cfg.output_dir = out;
            }
            let outcome = h(harness::run_experiment(&cfg))?;
            print!("{}", outcome.report.to_text());
            println!("artifacts in {}", outcome.dir.display());
        }
        Command::ShowConfig { cfg: args } => {
            let cfg = args.load()?;
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

/// Word-list spec of a config resolved against its corpus source, for callers outside the harness.
pub fn config_wordlist(cfg: &ExperimentConfig) -> Result<Option<nlgrl_core::WordList>, HarnessError> {
    let Some(spec) = &cfg.nlu.wordlist else { return Ok(None) };
    let grammar = match spec {
        WordListSpec::Level(_) => harness::source_grammar(&cfg.corpus)?,
        WordListSpec::Path(_) => None,
    };
    Ok(Some(harness::resolve_wordlist(spec, grammar.as_ref())?))
}
