//! Closed-loop scoring: realize each test act, optionally pass the words
//! through a noise channel, understand them, and compare acts.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bleu::{corpus_bleu, BleuError};
use crate::channel::{corrupt, ChannelError, ConfusionMatrix, WerReport};
use crate::corpus::grammar::{GrammarConfig, GrammarInverter};
use crate::corpus::{vocab_coverage, Corpus, CorpusError};
use crate::da::{accuracy, f1, DialogueAct};
use crate::nn::nlu::NluModel;
use crate::nn::policy::PolicyModel;
use crate::nn::ModelError;
use crate::seed;
use crate::text::{tokenize, WordList};

/// Maps words to a dialogue act. Must accept any token sequence.
pub trait Understander {
    fn understand(&self, tokens: &[String]) -> DialogueAct;
}

impl Understander for NluModel {
    fn understand(&self, tokens: &[String]) -> DialogueAct {
        self.predict(tokens)
    }
}

impl Understander for GrammarInverter {
    fn understand(&self, tokens: &[String]) -> DialogueAct {
        GrammarInverter::understand(self, tokens)
    }
}

/// Maps a dialogue act to words.
pub trait Realizer {
    fn realize(&self, da: &DialogueAct) -> Result<Vec<String>, ModelError>;
}

/// Greedy decoding with a length cap.
#[derive(Debug, Clone, Copy)]
pub struct GreedyRealizer<'m> {
    pub model: &'m PolicyModel,
    pub max_len: usize,
}

impl Realizer for GreedyRealizer<'_> {
    fn realize(&self, da: &DialogueAct) -> Result<Vec<String>, ModelError> {
        let g = self.model.greedy(da, self.max_len)?;
        Ok(self.model.vocab.decode(g.utterance()))
    }
}

/// Each triple realized by its most likely grammar template.
#[derive(Debug, Clone)]
pub struct TemplateRealizer<'g>(pub &'g GrammarConfig);

impl Realizer for TemplateRealizer<'_> {
    fn realize(&self, da: &DialogueAct) -> Result<Vec<String>, ModelError> {
        Ok(self.0.realize_mode(da).map(|s| tokenize(&s)).unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bleu(#[from] BleuError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Optional parts of an evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions<'a> {
    /// Channel and the seed its corruption streams derive from.
    pub channel: Option<(&'a ConfusionMatrix, u64)>,
    pub wordlist: Option<(&'a WordList, &'a BTreeSet<String>)>,
}

/// Corpus-level scores. Accuracy and F1 are means of per-act values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub n: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub bleu: f64,
    pub wer: Option<f64>,
    pub coverage: Option<f64>,
}

/// Per-act outcome, kept for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub da: DialogueAct,
    pub generated: Vec<String>,
    pub heard: Vec<String>,
    pub predicted: DialogueAct,
}

/// Scores `nlg` against `nlu` on every example of `test`.
pub fn evaluate<G, U>(nlg: &G, nlu: &U, test: &Corpus, options: EvalOptions<'_>) -> Result<(EvalScores, Vec<EvalItem>), EvalError>
where
    G: Realizer + ?Sized,
    U: Understander + ?Sized,
{
    if test.is_empty() {
        return Err(CorpusError::EmptyCorpus.into());
    }
    let mut items = Vec::with_capacity(test.len());
    for (k, e) in test.iter().enumerate() {
        let generated = nlg.realize(&e.da)?;
        let heard = match options.channel {
            Some((m, s)) => corrupt(&generated, m, &mut seed::child_rng(s, &[k as u64])),
            None => generated.clone(),
        };
        let predicted = nlu.understand(&heard);
        items.push(EvalItem { da: e.da.clone(), generated, heard, predicted });
    }
    let n = items.len() as f64;
    let acc = items.iter().map(|i| accuracy(&i.da, &i.predicted)).sum::<f64>() / n;
    let f = items.iter().map(|i| f1(&i.da, &i.predicted)).sum::<f64>() / n;
    let refs: Vec<Vec<String>> = test.iter().map(|e| e.tokens()).collect();
    let hyps: Vec<Vec<String>> = items.iter().map(|i| i.generated.clone()).collect();
    let bleu = corpus_bleu(&refs, &hyps)?;
    let wer = match options.channel {
        Some(_) => Some(WerReport::corpus(items.iter().map(|i| (i.generated.as_slice(), i.heard.as_slice())))?.wer),
        None => None,
    };
    let coverage = match options.wordlist {
        Some((wl, stop)) => Some(vocab_coverage(items.iter().map(|i| (&i.da, i.generated.as_slice())), wl, stop)?),
        None => None,
    };
    Ok((EvalScores { n: items.len(), accuracy: acc, f1: f, bleu, wer, coverage }, items))
}
