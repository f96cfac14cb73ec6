//! Supervised training: maximum likelihood for the generator, joint intent and
//! slot losses for the understanding model.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::nlu::{NluConfig, NluLabels, NluModel, NluTarget};
use super::ops::softmax;
use super::policy::{PolicyConfig, PolicyModel};
use super::{Adam, AdamConfig, LinearSchedule, ModelError};
use crate::corpus::{build_vocab, Corpus, CorpusError, TokenId, TokenVocabulary};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("invalid training configuration: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Linear,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: Schedule,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Generator only: score utterance tokens alone instead of the whole sequence.
    pub utterance_only: bool,
    /// Understanding model only: probability of replacing an input token by `[UNK]`.
    pub word_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            lr: 1e-3,
            schedule: Schedule::Linear,
            seed: 0,
            adam: AdamConfig::default(),
            utterance_only: false,
            word_dropout: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::BadConfig("epochs and batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::BadConfig("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.word_dropout) {
            return Err(TrainError::BadConfig("word_dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    fn schedule(&self, total_steps: usize) -> LinearSchedule {
        match self.schedule {
            Schedule::Linear => LinearSchedule { base: self.lr, total: total_steps },
            Schedule::Constant => LinearSchedule { base: self.lr, total: 0 },
        }
    }
}

/// One generator training sequence: `[act tokens] [utterance] [EOS]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MleSequence {
    pub ids: Vec<TokenId>,
    /// Length of the act prefix, ending in `[RSP]`.
    pub prefix: usize,
}

pub fn mle_sequences(corpus: &Corpus, vocab: &TokenVocabulary) -> Vec<MleSequence> {
    corpus
        .iter()
        .map(|e| {
            let mut ids = vocab.encode_da(&e.da);
            let prefix = ids.len();
            ids.extend(vocab.encode(&e.tokens()));
            ids.push(TokenVocabulary::EOS_ID);
            MleSequence { ids, prefix }
        })
        .collect()
}

/// Mean next-token negative log-likelihood over the scored positions of `batch`.
///
/// All positions after the first are scored, or only those after the act
/// prefix when `utterance_only`. Gradients accumulate into `grads` when given.
pub fn mle_loss(model: &PolicyModel, batch: &[MleSequence], utterance_only: bool, mut grads: Option<&mut [f64]>) -> Result<f64, ModelError> {
    let first = |s: &MleSequence| if utterance_only { s.prefix } else { 1 };
    let total: usize = batch.iter().map(|s| s.ids.len().saturating_sub(first(s))).sum();
    if total == 0 {
        return Ok(0.0);
    }
    let v = model.vocab_size();
    let mut loss = 0.0;
    for s in batch {
        let start = first(s);
        if s.ids.len() <= start {
            continue;
        }
        let tr = model.trace(&s.ids, start - 1)?;
        let mut dlogits = vec![0.0; (s.ids.len() - (start - 1)) * v];
        for i in start..s.ids.len() {
            let row = &mut dlogits[(i - start) * v..(i - start + 1) * v];
            row.copy_from_slice(tr.logits(i - 1));
            let lse = softmax(row);
            let y = s.ids[i] as usize;
            loss += lse - tr.logits(i - 1)[y];
            row[y] -= 1.0;
            for g in row.iter_mut() {
                *g /= total as f64;
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            model.backward(&tr, &dlogits, &vec![0.0; s.ids.len()], true, g);
        }
    }
    Ok(loss / total as f64)
}

/// Result of a supervised run: the model plus mean loss per epoch.
#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub epoch_losses: Vec<f64>,
}

/// Trains a fresh generator on `corpus` by maximum likelihood.
pub fn nlg_mle_train(corpus: &Corpus, model_config: PolicyConfig, config: &TrainConfig) -> Result<Trained<PolicyModel>, TrainError> {
    config.validate()?;
    let vocab = build_vocab(corpus)?;
    let model = PolicyModel::new(model_config, vocab, seed::derive(config.seed, &[0x6e]))?;
    nlg_mle_continue(model, corpus, config)
}

/// Maximum-likelihood training starting from `model`.
pub fn nlg_mle_continue(mut model: PolicyModel, corpus: &Corpus, config: &TrainConfig) -> Result<Trained<PolicyModel>, TrainError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus.into());
    }
    let data = mle_sequences(corpus, &model.vocab);
    if let Some(s) = data.iter().find(|s| s.ids.len() > model.config.context) {
        return Err(ModelError::TooLong { len: s.ids.len(), max: model.config.context }.into());
    }
    let steps_per_epoch = data.len().div_ceil(config.batch_size);
    let sched = config.schedule(config.epochs * steps_per_epoch);
    let mut opt = Adam::new(model.params.len(), config.adam);
    let mut grads = vec![0.0; model.params.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut seed::child_rng(config.seed, &[0x3c, epoch as u64]));
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<MleSequence> = chunk.iter().map(|&i| data[i].clone()).collect();
            grads.fill(0.0);
            let loss = mle_loss(&model, &batch, config.utterance_only, Some(&mut grads))?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::Diverged { epoch, step, loss });
            }
            opt.step(&mut model.params.data, &grads, sched.at(step));
            sum += loss * chunk.len() as f64;
            step += 1;
        }
        let mean = sum / data.len() as f64;
        log::debug!("mle epoch {epoch}: loss {mean:.4}");
        epoch_losses.push(mean);
    }
    Ok(Trained { model, epoch_losses })
}

/// Understanding-model training outcome.
#[derive(Debug, Clone)]
pub struct NluTrained {
    pub model: NluModel,
    pub epoch_losses: Vec<f64>,
    /// Examples whose values could not all be located; they train intents only.
    pub skipped_slot_examples: usize,
}

/// Vocabulary over utterance tokens, by descending frequency then lexicographically.
pub fn utterance_vocab(corpus: &Corpus) -> TokenVocabulary {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in corpus.iter() {
        for t in e.tokens() {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut v: Vec<(String, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    TokenVocabulary::from_tokens(v.into_iter().map(|(t, _)| t))
}

/// Trains an understanding model on `corpus` with summed intent and slot losses.
pub fn nlu_train(corpus: &Corpus, model_config: NluConfig, config: &TrainConfig) -> Result<NluTrained, TrainError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus.into());
    }
    let labels = NluLabels::from_das(corpus.iter().map(|e| &e.da));
    let mut model = NluModel::new(model_config, utterance_vocab(corpus), labels, seed::derive(config.seed, &[0x4e]))?;
    let data: Vec<(Vec<TokenId>, NluTarget)> = corpus
        .iter()
        .map(|e| {
            let toks = e.tokens();
            (model.encode(&toks), model.target(&e.da, &toks))
        })
        .collect();
    let skipped = data.iter().filter(|(_, t)| t.tags.is_none()).count();
    if skipped > 0 {
        log::info!("{skipped} of {} examples have values missing from the utterance; slot supervision skipped for them", data.len());
    }
    let steps_per_epoch = data.len().div_ceil(config.batch_size);
    let sched = config.schedule(config.epochs * steps_per_epoch);
    let mut opt = Adam::new(model.params.len(), config.adam);
    let mut grads = vec![0.0; model.params.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut seed::child_rng(config.seed, &[0x3d, epoch as u64]));
        let mut drop_rng = seed::child_rng(config.seed, &[0x3e, epoch as u64]);
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            grads.fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (ids, target) = &data[i];
                let ids: Vec<TokenId> = ids
                    .iter()
                    .map(|&id| if config.word_dropout > 0.0 && drop_rng.gen::<f64>() < config.word_dropout { TokenVocabulary::UNK_ID } else { id })
                    .collect();
                let (li, ls) = model.loss(&ids, target, scale, scale, Some(&mut grads))?;
                batch_loss += li + ls;
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged { epoch, step, loss: batch_loss });
            }
            opt.step(&mut model.params.data, &grads, sched.at(step));
            sum += batch_loss * chunk.len() as f64;
            step += 1;
        }
        let mean = sum / data.len() as f64;
        log::debug!("nlu epoch {epoch}: loss {mean:.4}");
        epoch_losses.push(mean);
    }
    Ok(NluTrained { model, epoch_losses, skipped_slot_examples: skipped })
}
