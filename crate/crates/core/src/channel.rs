//! Word-level noise channel: Levenshtein alignment, WER, a substitution /
//! deletion confusion matrix learned from aligned clean/noisy text, and
//! sampling-based corruption through that matrix.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::seed;

/// Reserved vocabulary entry standing for "the word was deleted".
/// Tokenized text can never produce it because `<` and `>` split off.
pub const DEL_TOKEN: &str = "<del>";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("confusion matrix needs at least one sentence pair")]
    NoPairs,
    #[error("WER is undefined for an empty reference")]
    EmptyReference,
    #[error("count triplet ({i}, {j}) is out of bounds for a vocabulary of {n}")]
    IndexOutOfBounds { i: usize, j: usize, n: usize },
    #[error("deletion token index {0} does not point at `{DEL_TOKEN}`")]
    BadDeleteIndex(usize),
    #[error("duplicate vocabulary entry `{0}`")]
    DuplicateWord(String),
    #[error("corruption profile is unachievable: {0}")]
    Unachievable(&'static str),
    #[error("realized WER {realized:.4} misses target {target:.4} by more than 0.02")]
    Calibration { realized: f64, target: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditOp {
    Match(String),
    Substitute(String, String),
    Delete(String),
    Insert(String),
}

/// Ordered edit script turning the clean sequence into the noisy one.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Alignment {
    pub ops: Vec<EditOp>,
}

impl Alignment {
    /// Number of non-match operations.
    pub fn cost(&self) -> usize {
        self.ops.iter().filter(|o| !matches!(o, EditOp::Match(_))).count()
    }

    /// (substitutions, insertions, deletions).
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for o in &self.ops {
            match o {
                EditOp::Substitute(..) => c.0 += 1,
                EditOp::Insert(_) => c.1 += 1,
                EditOp::Delete(_) => c.2 += 1,
                EditOp::Match(_) => {}
            }
        }
        c
    }

    /// Applies the script, returning the noisy side.
    pub fn replay(&self) -> Vec<String> {
        self.ops
            .iter()
            .filter_map(|o| match o {
                EditOp::Match(w) | EditOp::Substitute(_, w) | EditOp::Insert(w) => Some(w.clone()),
                EditOp::Delete(_) => None,
            })
            .collect()
    }
}

/// Minimum-edit alignment with unit costs.
///
/// Among alignments with the fewest edits, the one with the fewest
/// substitutions (equivalently the most matches) wins. Remaining ties are
/// broken during backtrace in the order Match, Substitute, Delete, Insert.
pub fn align_words<S: AsRef<str>>(clean: &[S], noisy: &[S]) -> Alignment {
    let (n, m) = (clean.len(), noisy.len());
    let w = m + 1;
    // (edits, substitutions), compared lexicographically
    let mut d = alloc::vec![(0u32, 0u32); (n + 1) * w];
    for i in 1..=n {
        d[i * w] = (i as u32, 0);
    }
    for j in 1..=m {
        d[j] = (j as u32, 0);
    }
    for i in 1..=n {
        for j in 1..=m {
            let same = clean[i - 1].as_ref() == noisy[j - 1].as_ref();
            let diag = d[(i - 1) * w + j - 1];
            let diag = if same { diag } else { (diag.0 + 1, diag.1 + 1) };
            let up = d[(i - 1) * w + j];
            let left = d[i * w + j - 1];
            d[i * w + j] = diag.min((up.0 + 1, up.1)).min((left.0 + 1, left.1));
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let (a, b) = (clean[i - 1].as_ref(), noisy[j - 1].as_ref());
            let diag = d[(i - 1) * w + j - 1];
            if a == b && here == diag {
                ops.push(EditOp::Match(a.to_string()));
                i -= 1;
                j -= 1;
                continue;
            }
            if a != b && here == (diag.0 + 1, diag.1 + 1) {
                ops.push(EditOp::Substitute(a.to_string(), b.to_string()));
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 {
            let up = d[(i - 1) * w + j];
            if here == (up.0 + 1, up.1) {
                ops.push(EditOp::Delete(clean[i - 1].as_ref().to_string()));
                i -= 1;
                continue;
            }
        }
        ops.push(EditOp::Insert(noisy[j - 1].as_ref().to_string()));
        j -= 1;
    }
    ops.reverse();
    Alignment { ops }
}

/// Word error rate with its substitution / insertion / deletion breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WerReport {
    pub wer: f64,
    pub sub_rate: f64,
    pub ins_rate: f64,
    pub del_rate: f64,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_len: usize,
}

impl WerReport {
    fn from_counts(s: usize, i: usize, d: usize, n: usize) -> Self {
        let n_f = n as f64;
        WerReport {
            wer: (s + i + d) as f64 / n_f,
            sub_rate: s as f64 / n_f,
            ins_rate: i as f64 / n_f,
            del_rate: d as f64 / n_f,
            substitutions: s,
            insertions: i,
            deletions: d,
            reference_len: n,
        }
    }

    /// Pooled WER over many pairs (total edits / total reference words).
    pub fn corpus<'a, S, I>(pairs: I) -> Result<Self, ChannelError>
    where
        S: AsRef<str> + 'a,
        I: IntoIterator<Item = (&'a [S], &'a [S])>,
    {
        let (mut s, mut i, mut d, mut n) = (0, 0, 0, 0);
        for (r, h) in pairs {
            let (a, b, c) = align_words(r, h).counts();
            s += a;
            i += b;
            d += c;
            n += r.len();
        }
        if n == 0 {
            return Err(ChannelError::EmptyReference);
        }
        Ok(Self::from_counts(s, i, d, n))
    }
}

pub fn wer<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<WerReport, ChannelError> {
    if reference.is_empty() {
        return Err(ChannelError::EmptyReference);
    }
    let (s, i, d) = align_words(reference, hypothesis).counts();
    Ok(WerReport::from_counts(s, i, d, reference.len()))
}

/// Sparse on-disk form: `{"vocab": [...], "del_token_index": k, "counts": [[i, j, c], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub vocab: Vec<String>,
    pub del_token_index: usize,
    pub counts: Vec<(usize, usize, u64)>,
}

/// `counts[(i, j)]`: how often clean word `i` surfaced as `j` (or was deleted, `j = DEL`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    vocab: Vec<String>,
    index: BTreeMap<String, usize>,
    del: usize,
    counts: BTreeMap<(usize, usize), u64>,
    /// Per clean word: outcomes with positive count and their running totals.
    rows: Vec<Vec<(usize, u64)>>,
}

impl ConfusionMatrix {
    fn from_parts(vocab: Vec<String>, del: usize, counts: BTreeMap<(usize, usize), u64>) -> Result<Self, ChannelError> {
        let n = vocab.len();
        if vocab.get(del).map(String::as_str) != Some(DEL_TOKEN) {
            return Err(ChannelError::BadDeleteIndex(del));
        }
        let mut index = BTreeMap::new();
        for (k, w) in vocab.iter().enumerate() {
            if index.insert(w.clone(), k).is_some() {
                return Err(ChannelError::DuplicateWord(w.clone()));
            }
        }
        let mut rows = alloc::vec![Vec::new(); n];
        for (&(i, j), &c) in &counts {
            if i >= n || j >= n || i == del {
                return Err(ChannelError::IndexOutOfBounds { i, j, n });
            }
            if c > 0 {
                let prev = rows[i].last().map(|&(_, t)| t).unwrap_or(0);
                rows[i].push((j, prev + c));
            }
        }
        Ok(ConfusionMatrix { vocab, index, del, counts, rows })
    }

    /// Counts every aligned clean word: matches on the diagonal, substitutions
    /// off it, deletions in the `DEL` column. Insertions are not recorded.
    pub fn build<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<S>)]) -> Result<Self, ChannelError> {
        if pairs.is_empty() {
            return Err(ChannelError::NoPairs);
        }
        let lower = |s: &S| s.as_ref().to_lowercase();
        let mut words = BTreeSet::new();
        let mut aligned = Vec::with_capacity(pairs.len());
        for (c, n) in pairs {
            let c: Vec<String> = c.iter().map(lower).collect();
            let n: Vec<String> = n.iter().map(lower).collect();
            words.extend(c.iter().cloned());
            words.extend(n.iter().cloned());
            aligned.push(align_words(&c, &n));
        }
        words.remove(DEL_TOKEN);
        let mut vocab: Vec<String> = words.into_iter().collect();
        let del = vocab.len();
        vocab.push(DEL_TOKEN.to_string());
        let index: BTreeMap<&str, usize> = vocab.iter().enumerate().map(|(k, w)| (w.as_str(), k)).collect();
        let mut counts = BTreeMap::new();
        for a in &aligned {
            for op in &a.ops {
                let key = match op {
                    EditOp::Match(w) => (index[w.as_str()], index[w.as_str()]),
                    EditOp::Substitute(w, v) => (index[w.as_str()], index[v.as_str()]),
                    EditOp::Delete(w) => (index[w.as_str()], del),
                    EditOp::Insert(_) => continue,
                };
                *counts.entry(key).or_insert(0u64) += 1;
            }
        }
        Self::from_parts(vocab, del, counts)
    }

    pub fn from_sparse(file: SparseMatrix) -> Result<Self, ChannelError> {
        let n = file.vocab.len();
        let mut counts = BTreeMap::new();
        for (i, j, c) in file.counts {
            if i >= n || j >= n {
                return Err(ChannelError::IndexOutOfBounds { i, j, n });
            }
            *counts.entry((i, j)).or_insert(0) += c;
        }
        Self::from_parts(file.vocab, file.del_token_index, counts)
    }

    pub fn to_sparse(&self) -> SparseMatrix {
        SparseMatrix {
            vocab: self.vocab.clone(),
            del_token_index: self.del,
            counts: self.counts.iter().map(|(&(i, j), &c)| (i, j, c)).collect(),
        }
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }
    pub fn del_index(&self) -> usize {
        self.del
    }
    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }
    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts.get(&(i, j)).copied().unwrap_or(0)
    }
    pub fn row_total(&self, i: usize) -> u64 {
        self.rows.get(i).and_then(|r| r.last()).map(|&(_, t)| t).unwrap_or(0)
    }
    pub fn nonzero(&self) -> impl Iterator<Item = ((usize, usize), u64)> + '_ {
        self.counts.iter().map(|(&k, &c)| (k, c))
    }

    /// Normalized row for clean word `i`, as (outcome, probability) pairs.
    pub fn row_distribution(&self, i: usize) -> Vec<(usize, f64)> {
        let total = self.row_total(i) as f64;
        let mut prev = 0;
        self.rows[i]
            .iter()
            .map(|&(j, cum)| {
                let p = (cum - prev) as f64 / total;
                prev = cum;
                (j, p)
            })
            .collect()
    }

    /// True when every count sits on the diagonal.
    pub fn is_diagonal(&self) -> bool {
        self.counts.iter().all(|(&(i, j), &c)| c == 0 || i == j)
    }

    fn sample_outcome<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        let row = &self.rows[i];
        if row.len() == 1 {
            return row[0].0;
        }
        let total = row.last().expect("non-empty").1;
        let x = rng.gen_range(0..total);
        let k = row.partition_point(|&(_, cum)| cum <= x);
        row[k].0
    }
}

/// Replaces each known word by a draw from its normalized row; drawing `DEL`
/// drops the word. Unknown words (and words without row mass) pass through.
pub fn corrupt<S: AsRef<str>, R: Rng + ?Sized>(utterance: &[S], matrix: &ConfusionMatrix, rng: &mut R) -> Vec<String> {
    let mut out = Vec::with_capacity(utterance.len());
    for w in utterance {
        let w = w.as_ref();
        match matrix.index_of(w) {
            Some(i) if matrix.row_total(i) > 0 => {
                let j = matrix.sample_outcome(i, rng);
                if j != matrix.del {
                    out.push(matrix.vocab[j].clone());
                }
            }
            _ => out.push(w.to_string()),
        }
    }
    out
}

/// Parameters of the synthetic clean-to-noisy text channel that stands in for
/// a speech round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionProfile {
    /// Mean per-word substitution probability.
    pub sub_rate: f64,
    /// Mean per-word deletion probability.
    pub del_rate: f64,
    /// Per-word rate multipliers are drawn uniformly from `[1 - spread, 1 + spread]`.
    pub spread: f64,
    /// Substitutes are drawn with weight `exp(-d / temperature)` over character edit distance `d`.
    pub temperature: f64,
    /// Words within this character edit distance are candidate substitutes.
    pub max_char_distance: usize,
}

impl CorruptionProfile {
    /// Profile whose expected WER is `target`, split 70/30 between substitutions and deletions.
    pub fn with_target(target: f64) -> Self {
        CorruptionProfile { sub_rate: 0.7 * target, del_rate: 0.3 * target, spread: 0.8, temperature: 1.0, max_char_distance: 2 }
    }

    pub fn target_wer(&self) -> f64 {
        self.sub_rate + self.del_rate
    }

    pub fn is_silent(&self) -> bool {
        self.sub_rate == 0.0 && self.del_rate == 0.0
    }
}

fn char_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = alloc::vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

struct Kernel {
    vocab: Vec<String>,
    index: BTreeMap<String, usize>,
    /// (candidate, cumulative weight)
    neighbors: Vec<Vec<(usize, f64)>>,
    multiplier: Vec<f64>,
}

impl Kernel {
    fn new(corpus_tokens: &[Vec<String>], profile: &CorruptionProfile, seed_value: u64) -> Self {
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        for u in corpus_tokens {
            for t in u {
                *freq.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let vocab: Vec<String> = freq.keys().cloned().collect();
        let index = vocab.iter().enumerate().map(|(k, w)| (w.clone(), k)).collect();
        let mut rng = seed::child_rng(seed_value, &[0xc4a7]);
        let mut multiplier: Vec<f64> = vocab.iter().map(|_| 1.0 - profile.spread + 2.0 * profile.spread * rng.gen::<f64>()).collect();
        let total: f64 = vocab.iter().map(|w| freq[w] as f64).sum();
        let mean: f64 = vocab.iter().zip(&multiplier).map(|(w, m)| freq[w] as f64 * m).sum::<f64>() / total;
        if mean > 0.0 {
            multiplier.iter_mut().for_each(|m| *m /= mean);
        }
        let mut neighbors = Vec::with_capacity(vocab.len());
        for (k, w) in vocab.iter().enumerate() {
            let mut dists: Vec<(usize, usize)> =
                vocab.iter().enumerate().filter(|&(j, _)| j != k).map(|(j, v)| (char_distance(w, v), j)).collect();
            dists.sort_unstable();
            let mut picked: Vec<(usize, usize)> = dists.iter().copied().filter(|&(d, _)| d <= profile.max_char_distance).collect();
            if picked.is_empty() {
                picked = dists.iter().copied().take(3).collect();
            }
            let mut cum = 0.0;
            let row = picked
                .into_iter()
                .map(|(d, j)| {
                    cum += libm::exp(-(d as f64) / profile.temperature.max(1e-6));
                    (j, cum)
                })
                .collect();
            neighbors.push(row);
        }
        Kernel { vocab, index, neighbors, multiplier }
    }

    fn apply<R: Rng>(&self, tokens: &[String], profile: &CorruptionProfile, scale: f64, rng: &mut R) -> Vec<String> {
        let mut out = Vec::with_capacity(tokens.len());
        for t in tokens {
            let k = self.index[t.as_str()];
            let m = self.multiplier[k] * scale;
            let (mut ps, mut pd) = (profile.sub_rate * m, profile.del_rate * m);
            if ps + pd > 1.0 {
                let z = ps + pd;
                ps /= z;
                pd /= z;
            }
            let u: f64 = rng.gen();
            if u < pd {
                continue;
            }
            if u < pd + ps && !self.neighbors[k].is_empty() {
                let row = &self.neighbors[k];
                let x = rng.gen::<f64>() * row.last().expect("non-empty").1;
                let pick = row.iter().find(|&&(_, c)| x < c).unwrap_or(row.last().expect("non-empty")).0;
                out.push(self.vocab[pick].clone());
                continue;
            }
            out.push(t.clone());
        }
        out
    }
}

/// Clean and noisy tokens of one utterance.
pub type TokenPair = (Vec<String>, Vec<String>);

/// Produces (clean, noisy) token pairs for every utterance of `corpus`,
/// rescaling the profile's rates until the pooled WER lands on its target.
pub fn synth_noisy_pairs(
    corpus: &Corpus,
    profile: &CorruptionProfile,
    seed_value: u64,
) -> Result<Vec<TokenPair>, ChannelError> {
    let target = profile.target_wer();
    let valid = |x: f64| x.is_finite() && x >= 0.0;
    if !valid(profile.sub_rate) || !valid(profile.del_rate) || !valid(profile.spread) || profile.spread >= 1.0 {
        return Err(ChannelError::Unachievable("rates must be finite and non-negative, spread in [0, 1)"));
    }
    if target > 1.0 {
        return Err(ChannelError::Unachievable("target WER above 1 needs insertions, which this channel never makes"));
    }
    let clean: Vec<Vec<String>> = corpus.iter().map(|e| e.tokens()).collect();
    if profile.is_silent() || clean.is_empty() {
        return Ok(clean.iter().map(|c| (c.clone(), c.clone())).collect());
    }
    let kernel = Kernel::new(&clean, profile, seed_value);
    let run = |scale: f64| -> Vec<TokenPair> {
        clean
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let mut rng = seed::child_rng(seed_value, &[0x4015e, k as u64]);
                (c.clone(), kernel.apply(c, profile, scale, &mut rng))
            })
            .collect()
    };
    let measure = |pairs: &[(Vec<String>, Vec<String>)]| -> Result<f64, ChannelError> {
        Ok(WerReport::corpus(pairs.iter().map(|(a, b)| (a.as_slice(), b.as_slice())))?.wer)
    };
    let mut scale = 1.0;
    let mut pairs = run(scale);
    let mut realized = measure(&pairs)?;
    for _ in 0..6 {
        if (realized - target).abs() <= 0.002 || realized <= 0.0 {
            break;
        }
        scale *= target / realized;
        pairs = run(scale);
        realized = measure(&pairs)?;
    }
    if (realized - target).abs() > 0.02 {
        return Err(ChannelError::Calibration { realized, target });
    }
    Ok(pairs)
}
