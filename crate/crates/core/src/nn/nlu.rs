//! Joint intent detection and slot tagging.
//!
//! A windowed convolution over word embeddings gives one feature vector per
//! token. Max-pooling over tokens feeds a sigmoid head per intent; each token
//! feeds a softmax head over BIO tags.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use super::ops::{argmax, linear, linear_backward, log_sigmoid, sigmoid, softmax};
use super::{init_normal, ModelError, Params};
use crate::corpus::{span_text, TokenId, TokenVocabulary};
use crate::da::{normalize, DaTriple, DialogueAct, NONE};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NluConfig {
    pub d_emb: usize,
    pub d_hidden: usize,
    /// Tokens seen on each side of the centre token.
    pub half_window: usize,
    pub threshold: f64,
}

impl Default for NluConfig {
    fn default() -> Self {
        NluConfig { d_emb: 32, d_hidden: 64, half_window: 1, threshold: 0.5 }
    }
}

/// Intent name to the slot names it carried in training data.
pub type SlotInventory = BTreeMap<String, BTreeSet<String>>;

/// Output label sets of an understanding model.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NluLabels {
    pub intents: Vec<String>,
    /// Slot names; tag ids are `O`, then `B-s`, `I-s` per slot in this order.
    pub slots: Vec<String>,
    pub inventory: SlotInventory,
}

impl NluLabels {
    /// Normalized intents and valued slots seen in `das`.
    pub fn from_das<'a, I: IntoIterator<Item = &'a DialogueAct>>(das: I) -> Self {
        let mut intents = BTreeSet::new();
        let mut slots = BTreeSet::new();
        let mut inventory = SlotInventory::new();
        for da in das {
            for t in da.iter() {
                let (i, s, _) = t.key();
                intents.insert(i.to_string());
                let inv = inventory.entry(i.to_string()).or_default();
                if t.has_value() {
                    slots.insert(s.to_string());
                    inv.insert(s.to_string());
                }
            }
        }
        NluLabels { intents: intents.into_iter().collect(), slots: slots.into_iter().collect(), inventory }
    }

    pub fn n_tags(&self) -> usize {
        1 + 2 * self.slots.len()
    }

    pub fn tag_name(&self, tag: usize) -> String {
        match tag {
            0 => "O".to_string(),
            k => format!("{}-{}", if k % 2 == 1 { "B" } else { "I" }, self.slots[(k - 1) / 2]),
        }
    }

    fn begin(&self, slot: usize) -> usize {
        1 + 2 * slot
    }

    /// BIO tag ids for `tokens` by longest-first, leftmost, non-overlapping
    /// matching of every act value. `None` if some value has no free span.
    pub fn bio_tags(&self, da: &DialogueAct, tokens: &[String]) -> Option<Vec<usize>> {
        let mut tags = vec![0usize; tokens.len()];
        let mut taken = vec![false; tokens.len()];
        let mut values: Vec<(Vec<String>, usize)> = Vec::new();
        for t in da.iter().filter(|t| t.has_value()) {
            let slot = self.slots.iter().position(|s| s == t.key().1)?;
            values.push((crate::text::tokenize(t.value()), slot));
        }
        values.sort_by_key(|v| core::cmp::Reverse(v.0.len()));
        for (value, slot) in values {
            let n = value.len();
            if n == 0 || n > tokens.len() {
                return None;
            }
            let start = (0..=tokens.len() - n).find(|&s| tokens[s..s + n] == value[..] && !taken[s..s + n].iter().any(|&x| x))?;
            for k in start..start + n {
                taken[k] = true;
                tags[k] = if k == start { self.begin(slot) } else { self.begin(slot) + 1 };
            }
        }
        Some(tags)
    }
}

/// Builds an act from intents (in preference order), BIO tags and tokens.
///
/// Each span pairs with the first intent whose inventory holds its slot, or
/// with the first intent when none does. An `I-x` that does not continue an
/// `x` span opens one. Intents left without spans emit `(intent, none, none)`.
pub fn decode_slots<S: AsRef<str>>(intents: &[&str], tags: &[&str], tokens: &[S], inventory: &SlotInventory) -> DialogueAct {
    let mut spans: Vec<(String, Range<usize>)> = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (k, tag) in tags.iter().enumerate() {
        let (kind, slot) = match tag.split_once('-') {
            Some((b, s)) if b == "B" || b == "I" => (b, normalize(s)),
            _ => ("O", String::new()),
        };
        let continues = kind == "I" && open.as_ref().is_some_and(|(s, _)| *s == slot);
        if continues {
            continue;
        }
        if let Some((s, st)) = open.take() {
            spans.push((s, st..k));
        }
        if kind != "O" {
            open = Some((slot, k));
        }
    }
    if let Some((s, st)) = open {
        spans.push((s, st..tags.len()));
    }

    let mut da = DialogueAct::new();
    let intents: Vec<String> = intents.iter().map(|i| normalize(i)).collect();
    let mut used = vec![false; intents.len()];
    for (slot, r) in spans {
        let Some(k) = intents.iter().position(|i| inventory.get(i).is_some_and(|s| s.contains(&slot))).or((!intents.is_empty()).then_some(0)) else {
            continue;
        };
        let words: Vec<String> = tokens[r].iter().map(|t| t.as_ref().to_string()).collect();
        if let Ok(t) = DaTriple::new(&intents[k], &slot, &span_text(&words)) {
            da.insert(t);
            used[k] = true;
        }
    }
    for (k, i) in intents.iter().enumerate() {
        if !used[k] {
            if let Ok(t) = DaTriple::new(i, NONE, NONE) {
                da.insert(t);
            }
        }
    }
    da
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    emb: Range<usize>,
    conv_w: Range<usize>,
    conv_b: Range<usize>,
    intent_w: Range<usize>,
    intent_b: Range<usize>,
    slot_w: Range<usize>,
    slot_b: Range<usize>,
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct NluTrace {
    ids: Vec<TokenId>,
    inputs: Vec<f64>,
    hidden: Vec<f64>,
    pooled: Vec<f64>,
    /// Token that won the max for each pooled unit; `usize::MAX` for empty input.
    arg: Vec<usize>,
    pub intent_logits: Vec<f64>,
    pub slot_logits: Vec<f64>,
}

/// Supervision for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct NluTarget {
    pub intents: Vec<bool>,
    pub tags: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NluModel {
    pub config: NluConfig,
    pub vocab: TokenVocabulary,
    pub labels: NluLabels,
    pub params: Params,
    layout: Layout,
}

fn layout(cfg: &NluConfig, vocab: usize, labels: &NluLabels) -> (Params, Layout) {
    let mut p = Params::default();
    let width = (2 * cfg.half_window + 1) * cfg.d_emb;
    let emb = p.add("emb", &[vocab, cfg.d_emb]);
    let conv_w = p.add("conv.w", &[width, cfg.d_hidden]);
    let conv_b = p.add("conv.b", &[cfg.d_hidden]);
    let intent_w = p.add("intent.w", &[cfg.d_hidden, labels.intents.len()]);
    let intent_b = p.add("intent.b", &[labels.intents.len()]);
    let slot_w = p.add("slot.w", &[cfg.d_hidden, labels.n_tags()]);
    let slot_b = p.add("slot.b", &[labels.n_tags()]);
    (p, Layout { emb, conv_w, conv_b, intent_w, intent_b, slot_w, slot_b })
}

fn pair<'a>(g: &'a mut [f64], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

impl NluModel {
    pub fn new(config: NluConfig, vocab: TokenVocabulary, labels: NluLabels, seed_value: u64) -> Result<Self, ModelError> {
        let mut m = Self::empty(config, vocab, labels)?;
        let mut rng = seed::child_rng(seed_value, &[0x21]);
        let lay = m.layout.clone();
        let fan_in = ((2 * config.half_window + 1) * config.d_emb) as f64;
        let d = &mut m.params.data;
        init_normal(&mut d[lay.emb], 0.3, &mut rng);
        init_normal(&mut d[lay.conv_w], 1.0 / libm::sqrt(fan_in), &mut rng);
        init_normal(&mut d[lay.intent_w], 1.0 / libm::sqrt(config.d_hidden as f64), &mut rng);
        init_normal(&mut d[lay.slot_w], 1.0 / libm::sqrt(config.d_hidden as f64), &mut rng);
        Ok(m)
    }

    /// Zeroed parameters with the layout implied by `config`, for loading.
    pub fn empty(config: NluConfig, vocab: TokenVocabulary, labels: NluLabels) -> Result<Self, ModelError> {
        if config.d_emb == 0 || config.d_hidden == 0 {
            return Err(ModelError::BadConfig("sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&config.threshold) {
            return Err(ModelError::BadConfig("threshold must lie in [0, 1]"));
        }
        if labels.intents.is_empty() {
            return Err(ModelError::BadConfig("no intents"));
        }
        let (params, layout) = layout(&config, vocab.len(), &labels);
        Ok(NluModel { config, vocab, labels, params, layout })
    }

    fn p(&self, r: &Range<usize>) -> &[f64] {
        &self.params.data[r.clone()]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        self.vocab.encode(tokens)
    }

    pub fn forward(&self, ids: &[TokenId]) -> Result<NluTrace, ModelError> {
        if let Some(&id) = ids.iter().find(|&&i| i as usize >= self.vocab.len()) {
            return Err(ModelError::TokenOutOfRange { id, vocab: self.vocab.len() });
        }
        let (e, hd, w) = (self.config.d_emb, self.config.d_hidden, self.config.half_window);
        let width = (2 * w + 1) * e;
        let n = ids.len();
        let emb = self.p(&self.layout.emb);
        let mut inputs = vec![0.0; n * width];
        for t in 0..n {
            for o in 0..2 * w + 1 {
                let Some(s) = (t + o).checked_sub(w).filter(|&s| s < n) else { continue };
                let id = ids[s] as usize;
                inputs[t * width + o * e..t * width + (o + 1) * e].copy_from_slice(&emb[id * e..(id + 1) * e]);
            }
        }
        let mut hidden = vec![0.0; n * hd];
        for t in 0..n {
            let h = &mut hidden[t * hd..(t + 1) * hd];
            linear(&inputs[t * width..(t + 1) * width], self.p(&self.layout.conv_w), self.p(&self.layout.conv_b), h);
            for x in h.iter_mut() {
                *x = libm::tanh(*x);
            }
        }
        let mut pooled = vec![0.0; hd];
        let mut arg = vec![usize::MAX; hd];
        for j in 0..hd {
            for t in 0..n {
                if arg[j] == usize::MAX || hidden[t * hd + j] > pooled[j] {
                    pooled[j] = hidden[t * hd + j];
                    arg[j] = t;
                }
            }
        }
        let ni = self.labels.intents.len();
        let nt = self.labels.n_tags();
        let mut intent_logits = vec![0.0; ni];
        linear(&pooled, self.p(&self.layout.intent_w), self.p(&self.layout.intent_b), &mut intent_logits);
        let mut slot_logits = vec![0.0; n * nt];
        for t in 0..n {
            linear(&hidden[t * hd..(t + 1) * hd], self.p(&self.layout.slot_w), self.p(&self.layout.slot_b), &mut slot_logits[t * nt..(t + 1) * nt]);
        }
        Ok(NluTrace { ids: ids.to_vec(), inputs, hidden, pooled, arg, intent_logits, slot_logits })
    }

    /// Intent probabilities and per-token tag distributions.
    pub fn probabilities(&self, ids: &[TokenId]) -> Result<(Vec<f64>, Vec<Vec<f64>>), ModelError> {
        let tr = self.forward(ids)?;
        let intents = tr.intent_logits.iter().map(|&z| sigmoid(z)).collect();
        let tags = tr
            .slot_logits
            .chunks(self.labels.n_tags())
            .map(|c| {
                let mut p = c.to_vec();
                softmax(&mut p);
                p
            })
            .collect();
        Ok((intents, tags))
    }

    /// Thresholded intents, argmax tags, combined by [`decode_slots`].
    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> DialogueAct {
        let ids = self.encode(tokens);
        let tr = self.forward(&ids).expect("encoded ids are in range");
        let mut ranked: Vec<(usize, f64)> =
            tr.intent_logits.iter().map(|&z| sigmoid(z)).enumerate().filter(|&(_, p)| p >= self.config.threshold).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let intents: Vec<&str> = ranked.iter().map(|&(k, _)| self.labels.intents[k].as_str()).collect();
        let names: Vec<String> = tr.slot_logits.chunks(self.labels.n_tags()).map(|c| self.labels.tag_name(argmax(c))).collect();
        let tags: Vec<&str> = names.iter().map(String::as_str).collect();
        decode_slots(&intents, &tags, tokens, &self.labels.inventory)
    }

    /// Supervision for `(da, tokens)`; tags are `None` when some value is not found.
    pub fn target(&self, da: &DialogueAct, tokens: &[String]) -> NluTarget {
        let present: BTreeSet<&str> = da.intents();
        let intents = self.labels.intents.iter().map(|i| present.contains(i.as_str())).collect();
        NluTarget { intents, tags: self.labels.bio_tags(da, tokens) }
    }

    /// Summed intent BCE and mean-over-tokens slot cross-entropy of one example,
    /// weighted by `intent_scale` and `slot_scale`. Gradients accumulate into `grads` when given.
    pub fn loss(&self, ids: &[TokenId], target: &NluTarget, intent_scale: f64, slot_scale: f64, grads: Option<&mut [f64]>) -> Result<(f64, f64), ModelError> {
        let tr = self.forward(ids)?;
        let ni = self.labels.intents.len();
        let nt = self.labels.n_tags();
        let mut dint = vec![0.0; ni];
        let mut intent_loss = 0.0;
        for k in 0..ni {
            let z = tr.intent_logits[k];
            let y = target.intents[k];
            intent_loss -= if y { log_sigmoid(z) } else { log_sigmoid(-z) };
            dint[k] = intent_scale * (sigmoid(z) - f64::from(u8::from(y)));
        }
        let n = ids.len();
        let mut dslot = vec![0.0; n * nt];
        let mut slot_loss = 0.0;
        if let Some(tags) = target.tags.as_ref().filter(|_| n > 0) {
            for t in 0..n {
                let mut p = tr.slot_logits[t * nt..(t + 1) * nt].to_vec();
                let lse = softmax(&mut p);
                slot_loss += lse - tr.slot_logits[t * nt + tags[t]];
                for c in 0..nt {
                    let y = if c == tags[t] { 1.0 } else { 0.0 };
                    dslot[t * nt + c] = slot_scale * (p[c] - y) / n as f64;
                }
            }
            slot_loss /= n as f64;
        }
        if let Some(g) = grads {
            self.backward(&tr, &dint, &dslot, g);
        }
        Ok((intent_loss * intent_scale, slot_loss * slot_scale))
    }

    fn backward(&self, tr: &NluTrace, dint: &[f64], dslot: &[f64], g: &mut [f64]) {
        let lay = &self.layout;
        let (e, hd, w) = (self.config.d_emb, self.config.d_hidden, self.config.half_window);
        let width = (2 * w + 1) * e;
        let nt = self.labels.n_tags();
        let n = tr.ids.len();
        let mut dpooled = vec![0.0; hd];
        {
            let (dw, db) = pair(g, &lay.intent_w, &lay.intent_b);
            linear_backward(&tr.pooled, self.p(&lay.intent_w), dint, Some(&mut dpooled), dw, db);
        }
        let mut dh = vec![0.0; n * hd];
        for j in 0..hd {
            if tr.arg[j] != usize::MAX {
                dh[tr.arg[j] * hd + j] += dpooled[j];
            }
        }
        for t in 0..n {
            let (dw, db) = pair(g, &lay.slot_w, &lay.slot_b);
            linear_backward(&tr.hidden[t * hd..(t + 1) * hd], self.p(&lay.slot_w), &dslot[t * nt..(t + 1) * nt], Some(&mut dh[t * hd..(t + 1) * hd]), dw, db);
        }
        let mut dx = vec![0.0; width];
        for t in 0..n {
            let dpre: Vec<f64> = (0..hd).map(|j| dh[t * hd + j] * (1.0 - tr.hidden[t * hd + j] * tr.hidden[t * hd + j])).collect();
            dx.fill(0.0);
            {
                let (dw, db) = pair(g, &lay.conv_w, &lay.conv_b);
                linear_backward(&tr.inputs[t * width..(t + 1) * width], self.p(&lay.conv_w), &dpre, Some(&mut dx), dw, db);
            }
            let demb = &mut g[lay.emb.clone()];
            for o in 0..2 * w + 1 {
                let Some(s) = (t + o).checked_sub(w).filter(|&s| s < n) else { continue };
                let id = tr.ids[s] as usize;
                for i in 0..e {
                    demb[id * e + i] += dx[o * e + i];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        crate::text::tokenize(s)
    }

    #[test]
    fn decode_slots_examples() {
        let inv = SlotInventory::new();
        let da = decode_slots(&["Inform-Restaurant"], &["O", "B-Area"], &toks("the centre"), &inv);
        assert_eq!(da, DialogueAct::from_strs(&[("Inform-Restaurant", "Area", "centre")]).unwrap());
        let da = decode_slots(&["NoOffer-Hotel"], &["O", "O"], &toks("no hotels"), &inv);
        assert_eq!(da, DialogueAct::from_strs(&[("NoOffer-Hotel", "none", "none")]).unwrap());
        let da = decode_slots(&["Inform-Restaurant"], &["I-Area"], &toks("north"), &inv);
        assert_eq!(da, DialogueAct::from_strs(&[("Inform-Restaurant", "Area", "north")]).unwrap());
        assert!(decode_slots(&[], &["B-area"], &toks("north"), &inv).is_empty());
    }

    #[test]
    fn decode_slots_pairs_by_inventory() {
        let mut inv = SlotInventory::new();
        inv.insert("inform-train".into(), ["day".to_string()].into_iter().collect());
        inv.insert("inform-hotel".into(), ["stars".to_string()].into_iter().collect());
        let tokens = toks("it has 4 stars . it runs on monday .");
        let tags = ["O", "O", "B-stars", "O", "O", "O", "O", "O", "B-day", "O"];
        let da = decode_slots(&["inform-train", "inform-hotel", "request-taxi"], &tags, &tokens, &inv);
        let want = DialogueAct::from_strs(&[("inform-hotel", "stars", "4"), ("inform-train", "day", "monday"), ("request-taxi", "none", "none")]).unwrap();
        assert_eq!(da, want);
        // a multi-token span and adjacent spans of different slots
        let tokens = toks("golden wok north");
        let da = decode_slots(&["x"], &["B-name", "I-name", "I-area"], &tokens, &inv);
        assert_eq!(da, DialogueAct::from_strs(&[("x", "name", "golden wok"), ("x", "area", "north")]).unwrap());
    }

    #[test]
    fn bio_tags_longest_match() {
        let da = DialogueAct::from_strs(&[("Inform-Train", "Depart", "stansted airport"), ("Inform-Train", "Dest", "ely")]).unwrap();
        let labels = NluLabels::from_das([&da]);
        assert_eq!(labels.slots, ["depart", "dest"]);
        let tokens = toks("it goes to ely from stansted airport .");
        let tags = labels.bio_tags(&da, &tokens).unwrap();
        let names: Vec<String> = tags.iter().map(|&t| labels.tag_name(t)).collect();
        assert_eq!(names, ["O", "O", "O", "B-dest", "O", "B-depart", "I-depart", "O"]);
        assert!(labels.bio_tags(&da, &toks("it goes to london")).is_none());
    }

    #[test]
    fn labels_from_das() {
        let a = DialogueAct::from_strs(&[("Inform-Hotel", "Stars", "4"), ("NoOffer-Restaurant", "none", "none")]).unwrap();
        let l = NluLabels::from_das([&a]);
        assert_eq!(l.intents, ["inform-hotel", "nooffer-restaurant"]);
        assert_eq!(l.n_tags(), 3);
        assert!(l.inventory["nooffer-restaurant"].is_empty());
        assert_eq!(l.tag_name(1), "B-stars");
        assert_eq!(l.tag_name(2), "I-stars");
    }

    #[test]
    fn predict_is_valid_and_deterministic() {
        let a = DialogueAct::from_strs(&[("Inform-Hotel", "Stars", "4")]).unwrap();
        let labels = NluLabels::from_das([&a]);
        let vocab = TokenVocabulary::from_tokens(toks("it has 4 stars ."));
        let m = NluModel::new(NluConfig::default(), vocab, labels, 1).unwrap();
        let u = toks("it has 4 stars , [UNK] zebra");
        assert_eq!(m.predict(&u), m.predict(&u));
        let _ = m.predict::<&str>(&[]);
    }
}
