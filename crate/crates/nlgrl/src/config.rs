//! Experiment configuration: one TOML document covering every stage, shipped
//! presets, and `key.path=value` overrides from the command line.

use std::path::{Path, PathBuf};

use nlgrl_core::channel::CorruptionProfile;
use nlgrl_core::nn::nlu::NluConfig;
use nlgrl_core::nn::policy::PolicyConfig;
use nlgrl_core::nn::train::TrainConfig;
use nlgrl_core::rl::PpoConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Relative output directories resolve against this variable when it is set.
pub const OUTPUT_ROOT_ENV: &str = "NLGRL_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("cannot parse config: {0}")]
    Syntax(String),
    #[error("bad override `{0}`: expected key.path=value")]
    Override(String),
    #[error("unknown preset `{0}` (expected one of: {list})", list = Preset::NAMES.join(", "))]
    UnknownPreset(String),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
}

fn field(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { path: path.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    /// Generated from a template grammar; the built-in one unless `grammar` names a JSON file.
    Synthetic { n: usize, grammar: Option<PathBuf> },
    /// Pre-converted corpus JSONL.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub source: CorpusSource,
    pub train_frac: f64,
    pub test_frac: f64,
    /// Evaluate on at most this many test examples.
    #[serde(default)]
    pub eval_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordListSpec {
    /// Content words of grammar templates at or below this level.
    Level(u8),
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NluSection {
    pub model: NluConfig,
    pub train: TrainConfig,
    /// Restricts the understanding model's training corpus to in-list utterances.
    #[serde(default)]
    pub wordlist: Option<WordListSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NlgSection {
    pub model: PolicyConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSpec {
    /// A confusion matrix file.
    Matrix(PathBuf),
    /// A synthesized channel calibrated to this word error rate.
    TargetWer(f64),
    Profile(CorruptionProfile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Seed pipelines run concurrently up to this many; 1 is strict sequential mode.
    #[serde(default = "one")]
    pub jobs: usize,
    /// Write a fine-tuning checkpoint every this many iterations, besides the final one.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    pub corpus: CorpusSection,
    pub nlu: NluSection,
    pub nlg: NlgSection,
    #[serde(default)]
    pub channel: Option<ChannelSpec>,
    pub ppo: PpoConfig,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Clean,
    Noisy20,
    Noisy30,
    Vocab,
    Vocab2,
}

impl Preset {
    pub const NAMES: [&'static str; 5] = ["clean", "noisy-20", "noisy-30", "vocab", "vocab-2"];
    const ALL: [Preset; 5] = [Preset::Clean, Preset::Noisy20, Preset::Noisy30, Preset::Vocab, Preset::Vocab2];

    pub fn name(self) -> &'static str {
        Self::NAMES[Self::ALL.iter().position(|&p| p == self).expect("listed")]
    }

    pub fn parse(name: &str) -> Result<Self, ConfigError> {
        Self::NAMES.iter().position(|&n| n == name).map(|k| Self::ALL[k]).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))
    }

    pub fn config(self) -> ExperimentConfig {
        let mut c = ExperimentConfig::desk(self.name());
        match self {
            Preset::Clean => {}
            Preset::Noisy20 => c.channel = Some(ChannelSpec::TargetWer(0.20)),
            Preset::Noisy30 => c.channel = Some(ChannelSpec::TargetWer(0.30)),
            Preset::Vocab => c.nlu.wordlist = Some(WordListSpec::Level(1)),
            Preset::Vocab2 => c.nlu.wordlist = Some(WordListSpec::Level(2)),
        }
        c
    }
}

impl ExperimentConfig {
    /// Settings sized for a single desktop core: a 5k-example corpus, a two-layer
    /// generator and 128-rollout fine-tuning batches.
    pub fn desk(name: &str) -> Self {
        ExperimentConfig {
            name: name.to_string(),
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("runs").join(name),
            jobs: 1,
            checkpoint_every: None,
            corpus: CorpusSection { source: CorpusSource::Synthetic { n: 5000, grammar: None }, train_frac: 0.9, test_frac: 0.1, eval_limit: None },
            nlu: NluSection {
                model: NluConfig::default(),
                train: TrainConfig { epochs: 8, batch_size: 32, lr: 3e-3, word_dropout: 0.1, ..TrainConfig::default() },
                wordlist: None,
            },
            nlg: NlgSection { model: PolicyConfig::default(), train: TrainConfig { epochs: 8, batch_size: 16, lr: 2e-3, ..TrainConfig::default() } },
            channel: None,
            ppo: PpoConfig::desk(),
        }
    }

    /// Reads a config file, or a preset when `path` is `None`, then applies overrides.
    pub fn load(path: Option<&Path>, preset: Option<Preset>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match (path, preset) {
            (Some(p), _) => crate::io::read_text(p)?.parse::<toml::Table>().map_err(|e| ConfigError::Syntax(e.to_string()))?,
            (None, p) => toml::Table::try_from(p.unwrap_or(Preset::Clean).config()).expect("presets serialize"),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self, ConfigError> {
        let text = toml::to_string(&table).expect("table serializes");
        let de = toml::Deserializer::parse(&text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().message().to_string();
            field(&path, message)
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks value ranges and that every referenced file exists.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(field("seeds", "must list at least one seed"));
        }
        if self.jobs == 0 {
            return Err(field("jobs", "must be positive"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(field("checkpoint_every", "must be positive"));
        }
        let c = &self.corpus;
        if !(c.train_frac > 0.0 && c.test_frac > 0.0 && c.train_frac + c.test_frac <= 1.0 + 1e-12) {
            return Err(field("corpus", "train_frac and test_frac must be positive and sum to at most 1"));
        }
        match &c.source {
            CorpusSource::Synthetic { grammar: Some(p), .. } => exists("corpus.source.grammar", p)?,
            CorpusSource::File { path } => exists("corpus.source.path", path)?,
            CorpusSource::Synthetic { .. } => {}
        }
        if let Some(WordListSpec::Path(p)) = &self.nlu.wordlist {
            exists("nlu.wordlist.path", p)?;
        }
        match &self.channel {
            Some(ChannelSpec::Matrix(p)) => exists("channel.matrix", p)?,
            Some(ChannelSpec::TargetWer(w)) if !(0.0..=1.0).contains(w) => return Err(field("channel.target_wer", "must lie in [0, 1]")),
            _ => {}
        }
        self.nlu.train.validate().map_err(|e| field("nlu.train", e.to_string()))?;
        self.nlg.train.validate().map_err(|e| field("nlg.train", e.to_string()))?;
        self.nlg.model.validate().map_err(|e| field("nlg.model", e.to_string()))?;
        self.ppo.validate().map_err(|e| field("ppo", e.to_string()))?;
        Ok(())
    }

    /// `output_dir`, under `$NLGRL_OUTPUT_ROOT` when relative and the variable is set.
    pub fn output_path(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

fn exists(path: &str, p: &Path) -> Result<(), ConfigError> {
    if p.exists() {
        Ok(())
    } else {
        Err(field(path, format!("{} does not exist", p.display())))
    }
}

/// Sets `a.b.c` to `value`, read as a TOML value when it parses as one and as a string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let keys: Vec<&str> = key.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let (last, parents) = keys.split_last().expect("non-empty");
    let mut cur = table;
    for (depth, k) in parents.iter().enumerate() {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| field(&keys[..=depth].join("."), "is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for name in Preset::NAMES {
            let c = Preset::parse(name).unwrap().config();
            let back = ExperimentConfig::from_table(c.to_toml().parse().unwrap()).unwrap();
            assert_eq!(back, c);
            c.validate().unwrap();
        }
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = ExperimentConfig::load(None, Some(Preset::Noisy30), &["ppo.iterations=7".into(), "seeds=[4]".into(), "name=x y".into()]).unwrap();
        assert_eq!(c.ppo.iterations, 7);
        assert_eq!(c.seeds, vec![4]);
        assert_eq!(c.name, "x y");
        assert_eq!(c.channel, Some(ChannelSpec::TargetWer(0.30)));
    }

    #[test]
    fn errors_carry_the_field_path() {
        match ExperimentConfig::load(None, None, &["nlg.train.epochs=\"many\"".into()]) {
            Err(ConfigError::Field { path, .. }) => assert_eq!(path, "nlg.train.epochs"),
            other => panic!("{other:?}"),
        }
        let mut t = toml::Table::try_from(Preset::Clean.config()).unwrap();
        t.get_mut("nlu").unwrap().as_table_mut().unwrap().remove("train");
        match ExperimentConfig::from_table(t) {
            Err(ConfigError::Field { path, message }) => {
                assert_eq!(path, "nlu");
                assert!(message.contains("train"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let c = ExperimentConfig::load(None, None, &["seeds=[]".into()]).unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::Field { path, .. }) if path == "seeds"));
        let c = ExperimentConfig::load(None, None, &["channel.matrix=/no/such/file.json".into()]).unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::Field { path, .. }) if path == "channel.matrix"));
        assert!(matches!(ExperimentConfig::load(None, None, &["novalue".into()]), Err(ConfigError::Override(_))));
    }

    #[test]
    fn hash_tracks_content() {
        let a = Preset::Clean.config();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.ppo.iterations += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
