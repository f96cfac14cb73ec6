//! Datasets of (dialogue act, utterance) pairs and the token inventory the models use.

pub mod grammar;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::da::{normalize, DialogueAct, ACT_MARK, RSP_MARK};
use crate::seed;
use crate::text::{is_number, is_punctuation, lemmatize, tokenize, WordList};

pub use grammar::{generate_synthetic, GrammarConfig, GrammarError, GrammarInverter};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const EOS: &str = "[EOS]";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("example has an empty dialogue act")]
    EmptyAct,
    #[error("example has an empty utterance")]
    EmptyUtterance,
    #[error("split fractions must be positive and sum to at most 1 (got {train} / {test})")]
    BadFractions { train: f64, test: f64 },
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("no eligible tokens to measure vocabulary coverage on")]
    NoEligibleTokens,
}

#[derive(Serialize, Deserialize)]
struct RawExample {
    dialogue_acts: DialogueAct,
    utterance: String,
}

/// One aligned `[A; U]` pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawExample", into = "RawExample")]
pub struct Example {
    pub da: DialogueAct,
    pub utterance: String,
}

impl TryFrom<RawExample> for Example {
    type Error = CorpusError;
    fn try_from(r: RawExample) -> Result<Self, CorpusError> {
        Example::new(r.dialogue_acts, r.utterance)
    }
}

impl From<Example> for RawExample {
    fn from(e: Example) -> Self {
        RawExample { dialogue_acts: e.da, utterance: e.utterance }
    }
}

impl Example {
    pub fn new(da: DialogueAct, utterance: String) -> Result<Self, CorpusError> {
        if da.is_empty() {
            return Err(CorpusError::EmptyAct);
        }
        if utterance.trim().is_empty() {
            return Err(CorpusError::EmptyUtterance);
        }
        Ok(Example { da, utterance })
    }

    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.utterance)
    }
}

/// Where a corpus came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub seed: Option<u64>,
}

/// An ordered list of examples. Equality ignores provenance.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Corpus {
    pub examples: Vec<Example>,
    pub provenance: Provenance,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.examples == other.examples
    }
}

impl Corpus {
    pub fn new(examples: Vec<Example>, provenance: Provenance) -> Self {
        Corpus { examples, provenance }
    }
    pub fn len(&self) -> usize {
        self.examples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
    pub fn iter(&self) -> impl Iterator<Item = &Example> {
        self.examples.iter()
    }
    pub fn das(&self) -> Vec<DialogueAct> {
        self.examples.iter().map(|e| e.da.clone()).collect()
    }

    fn derived(&self, examples: Vec<Example>, tag: &str) -> Corpus {
        Corpus {
            examples,
            provenance: Provenance {
                source: alloc::format!("{}|{}", self.provenance.source, tag),
                seed: self.provenance.seed,
            },
        }
    }
}

/// Model-side tokens for a dialogue act: `[ACT] intent + slot * value words , ... [RSP]`.
///
/// Intent and slot names stay whole tokens; values go through [`tokenize`].
pub fn da_tokens(da: &DialogueAct) -> Vec<String> {
    let mut out = Vec::with_capacity(2 + da.len() * 6);
    out.push(ACT_MARK.to_string());
    for (i, t) in da.iter().enumerate() {
        if i > 0 {
            out.push(",".to_string());
        }
        let (intent, slot, value) = t.key();
        out.push(intent.to_string());
        out.push("+".to_string());
        out.push(slot.to_string());
        out.push("*".to_string());
        out.extend(tokenize(value));
    }
    out.push(RSP_MARK.to_string());
    out
}

/// Tokens of every value in the act. These are exempt from vocabulary checks.
pub fn value_tokens(da: &DialogueAct) -> BTreeSet<String> {
    da.iter().filter(|t| t.has_value()).flat_map(|t| tokenize(t.value())).collect()
}

fn eligible<'a>(
    tokens: &'a [String],
    exempt: &'a BTreeSet<String>,
    stopwords: &'a BTreeSet<String>,
) -> impl Iterator<Item = String> + 'a {
    tokens
        .iter()
        .filter(move |t| !is_punctuation(t) && !is_number(t) && !exempt.contains(*t) && !stopwords.contains(*t))
        .map(|t| lemmatize(t))
        .filter(move |l| !stopwords.contains(l))
}

/// True when every content word of `tokens` (stop words, punctuation, numbers
/// and value words excluded) has its lemma in `wordlist`.
pub fn within_vocabulary(da: &DialogueAct, tokens: &[String], wordlist: &WordList, stopwords: &BTreeSet<String>) -> bool {
    let exempt = value_tokens(da);
    let ok = eligible(tokens, &exempt, stopwords).all(|l| wordlist.contains(&l));
    ok
}

/// Keeps, in order, the examples whose content words are all in `wordlist`.
pub fn filter_by_vocabulary(corpus: &Corpus, wordlist: &WordList, stopwords: &BTreeSet<String>) -> Corpus {
    let kept = corpus
        .examples
        .iter()
        .filter(|e| within_vocabulary(&e.da, &e.tokens(), wordlist, stopwords))
        .cloned()
        .collect();
    corpus.derived(kept, &alloc::format!("vocab:{}", wordlist.label))
}

/// Fraction of content tokens (over all utterances) whose lemma is in `wordlist`.
pub fn vocab_coverage<'a, I>(utterances: I, wordlist: &WordList, stopwords: &BTreeSet<String>) -> Result<f64, CorpusError>
where
    I: IntoIterator<Item = (&'a DialogueAct, &'a [String])>,
{
    let (mut hit, mut total) = (0usize, 0usize);
    for (da, tokens) in utterances {
        let exempt = value_tokens(da);
        for l in eligible(tokens, &exempt, stopwords) {
            total += 1;
            if wordlist.contains(&l) {
                hit += 1;
            }
        }
    }
    if total == 0 {
        return Err(CorpusError::NoEligibleTokens);
    }
    Ok(hit as f64 / total as f64)
}

/// Seeded disjoint train/test partition; both halves keep input order.
pub fn split(corpus: &Corpus, train_frac: f64, test_frac: f64, seed_value: u64) -> Result<(Corpus, Corpus), CorpusError> {
    let valid = |f: f64| f.is_finite() && f > 0.0;
    if !valid(train_frac) || !valid(test_frac) || train_frac + test_frac > 1.0 + 1e-12 {
        return Err(CorpusError::BadFractions { train: train_frac, test: test_frac });
    }
    let n = corpus.len();
    let n_train = libm::floor(train_frac * n as f64 + 1e-9) as usize;
    let n_test = (libm::floor(test_frac * n as f64 + 1e-9) as usize).min(n - n_train);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::child_rng(seed_value, &[0x5e17]));
    let mut train_idx = idx[..n_train].to_vec();
    let mut test_idx = idx[n_train..n_train + n_test].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let take = |ix: &[usize]| ix.iter().map(|&i| corpus.examples[i].clone()).collect::<Vec<_>>();
    Ok((corpus.derived(take(&train_idx), "train"), corpus.derived(take(&test_idx), "test")))
}

pub type TokenId = u32;

/// Dense token inventory for the generator. The reserved tokens occupy ids 0..5.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TokenVocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl From<Vec<String>> for TokenVocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
        TokenVocabulary { tokens, index }
    }
}

impl From<TokenVocabulary> for Vec<String> {
    fn from(v: TokenVocabulary) -> Self {
        v.tokens
    }
}

pub const RESERVED: [&str; 5] = [PAD, UNK, EOS, ACT_MARK, RSP_MARK];

impl TokenVocabulary {
    pub const PAD_ID: TokenId = 0;
    pub const UNK_ID: TokenId = 1;
    pub const EOS_ID: TokenId = 2;
    pub const ACT_ID: TokenId = 3;
    pub const RSP_ID: TokenId = 4;

    /// Reserved tokens followed by `tokens` (duplicates and reserved entries dropped).
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut seen: BTreeSet<String> = all.iter().cloned().collect();
        for t in tokens {
            if seen.insert(t.clone()) {
                all.push(t);
            }
        }
        all.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }
    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }
    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(UNK)
    }
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Prefix ids for a dialogue act, ending in `[RSP]`.
    pub fn encode_da(&self, da: &DialogueAct) -> Vec<TokenId> {
        self.encode(&da_tokens(da))
    }
}

/// Vocabulary over serialized acts and utterances, ordered by descending frequency then lexicographically.
pub fn build_vocab(corpus: &Corpus) -> Result<TokenVocabulary, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in &corpus.examples {
        for t in da_tokens(&e.da).into_iter().chain(e.tokens()) {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut ordered: Vec<(String, usize)> = counts.into_iter().collect();
    ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(TokenVocabulary::from_tokens(ordered.into_iter().map(|(t, _)| t)))
}

/// Normalized text of a token span, as compared against act values.
pub fn span_text(tokens: &[String]) -> String {
    normalize(&tokens.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::default_stopwords;
    use std::vec;

    fn ex(triples: &[(&str, &str, &str)], u: &str) -> Example {
        Example::new(DialogueAct::from_strs(triples).unwrap(), u.to_string()).unwrap()
    }

    #[test]
    fn example_invariants() {
        assert_eq!(Example::new(DialogueAct::new(), "x".into()), Err(CorpusError::EmptyAct));
        let da = DialogueAct::from_strs(&[("A", "b", "c")]).unwrap();
        assert_eq!(Example::new(da, "  ".into()), Err(CorpusError::EmptyUtterance));
    }

    #[test]
    fn da_token_layout() {
        let da = DialogueAct::from_strs(&[("Inform-Restaurant", "Area", "centre of town"), ("General-Reqmore", "none", "none")]).unwrap();
        assert_eq!(
            da_tokens(&da),
            vec!["[ACT]", "general-reqmore", "+", "none", "*", "none", ",", "inform-restaurant", "+", "area", "*", "centre", "of", "town", "[RSP]"]
        );
    }

    #[test]
    fn filter_rules() {
        let stop = default_stopwords();
        let wl = WordList::new("L", ["restaurant", "serve", "good", "cuisine"]).unwrap();
        let c = Corpus::new(
            vec![
                ex(&[("Inform-Restaurant", "Food", "thai")], "the restaurant serves exquisite cuisine"),
                ex(&[("Inform-Restaurant", "Food", "thai")], "the restaurant serves thai cuisine ."),
                ex(&[("Inform-Restaurant", "Choice", "21")], "21 good restaurants"),
            ],
            Provenance::default(),
        );
        let f = filter_by_vocabulary(&c, &wl, &stop);
        assert_eq!(f.len(), 2);
        assert_eq!(f.examples[0], c.examples[1]);
        assert_eq!(filter_by_vocabulary(&f, &wl, &stop), f);
    }

    #[test]
    fn coverage_hand_count() {
        let stop = default_stopwords();
        let wl = WordList::new("L", ["cheap", "eat"]).unwrap();
        let da = DialogueAct::from_strs(&[("General-Bye", "none", "none")]).unwrap();
        let toks: Vec<String> = vec!["cheap".into(), "eat".into(), "victuals".into()];
        let cov = vocab_coverage([(&da, toks.as_slice())], &wl, &stop).unwrap();
        assert!((cov - 2.0 / 3.0).abs() < 1e-15);
        let toks2: Vec<String> = vec!["cheap".into(), "the".into(), ".".into()];
        assert_eq!(vocab_coverage([(&da, toks2.as_slice())], &wl, &stop).unwrap(), 1.0);
        let empty: Vec<String> = vec!["the".into()];
        assert_eq!(vocab_coverage([(&da, empty.as_slice())], &wl, &stop), Err(CorpusError::NoEligibleTokens));
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let c = Corpus::new(
            (0..100).map(|i| ex(&[("A", "n", &alloc::format!("{i}"))], "x")).collect(),
            Provenance::default(),
        );
        let (a, b) = split(&c, 0.8, 0.2, 7).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        let (a2, b2) = split(&c, 0.8, 0.2, 7).unwrap();
        assert_eq!((a.clone(), b.clone()), (a2, b2));
        let sa: BTreeSet<_> = a.das().into_iter().collect();
        let sb: BTreeSet<_> = b.das().into_iter().collect();
        assert!(sa.is_disjoint(&sb));
        assert!(split(&c, 0.0, 0.2, 1).is_err());
        assert!(split(&c, 0.9, 0.2, 1).is_err());
        assert!(split(&c, f64::NAN, 0.2, 1).is_err());
    }

    #[test]
    fn vocab_reserved_and_stable() {
        let c = Corpus::new(vec![ex(&[("A", "b", "c d")], "c d e e .")], Provenance::default());
        let v = build_vocab(&c).unwrap();
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.get(r), Some(i as TokenId));
        }
        assert_eq!(v, build_vocab(&c).unwrap());
        // "c", "d" and "e" each occur twice; ties break lexicographically
        assert_eq!(&v.tokens()[5..8], &["c", "d", "e"]);
        assert!(build_vocab(&Corpus::default()).is_err());
    }
}
