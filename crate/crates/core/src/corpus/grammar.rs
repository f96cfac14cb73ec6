//! Template grammar for synthetic task-oriented corpora, plus its rule-based inverse.
//!
//! Every triple is realized as one sentence drawn from weighted paraphrase
//! templates. Sentences appear in the act's canonical triple order, so an
//! utterance can be split back into per-triple sentences at terminators.
//!
//! Templates carry a vocabulary level (1 = basic, 2 = intermediate,
//! 3 = advanced). The default grammar makes the most frequent paraphrase of
//! several slots either an advanced-vocabulary phrasing or one whose slot cue
//! sits several words away from the value. Both are harder for a
//! small-context or restricted-vocabulary understanding model, and both have
//! a plainer alternative a generator can learn to prefer.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Corpus, Example, Provenance};
use crate::da::{normalize, DaTriple, DialogueAct, NONE};
use crate::seed;
use crate::text::{is_number, is_punctuation, lemmatize, tokenize, WordList};

pub const PLACEHOLDER: &str = "{value}";
const TERMINATORS: [&str; 3] = [".", "?", "!"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrammarError {
    #[error("grammar declares {0} domain(s); at least 2 are required")]
    TooFewDomains(usize),
    #[error("intent `{0}` has no slot realizations")]
    NoSlots(String),
    #[error("intent `{intent}` slot `{slot}` has no templates")]
    NoTemplates { intent: String, slot: String },
    #[error("unknown value pool `{0}`")]
    UnknownPool(String),
    #[error("value pool `{0}` is empty")]
    EmptyPool(String),
    #[error("template {0:?} is malformed: {1}")]
    BadTemplate(String, &'static str),
    #[error("weight for `{0}` must be positive and finite")]
    BadWeight(String),
    #[error("probability `{0}` must lie in [0, 1]")]
    BadProbability(&'static str),
    #[error("follow-up intent `{0}` is not declared or carries a value")]
    BadFollowup(String),
    #[error("duplicate slot `{slot}` under intent `{intent}`")]
    DuplicateSlot { intent: String, slot: String },
    #[error("invalid triple: {0}")]
    Triple(#[from] crate::da::DaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub text: String,
    pub weight: f64,
    #[serde(default = "default_level")]
    pub level: u8,
}

fn default_level() -> u8 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub slot: String,
    /// Value pool name; `None` realizes the triple as `(intent, none, none)`.
    pub pool: Option<String>,
    pub templates: Vec<Template>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentSpec {
    pub name: String,
    pub domain: String,
    pub weight: f64,
    pub slots: Vec<SlotSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarConfig {
    pub pools: BTreeMap<String, Vec<String>>,
    pub intents: Vec<IntentSpec>,
    /// Chance of realizing a second slot of the same intent.
    pub extra_slot_prob: f64,
    /// Chance of appending one of `followups` (value-less intents).
    pub followup_prob: f64,
    pub followups: Vec<String>,
}

fn template_tokens(text: &str) -> Vec<String> {
    // Keep the placeholder as a single token.
    let mut out = Vec::new();
    for (i, part) in text.split(PLACEHOLDER).enumerate() {
        if i > 0 {
            out.push(PLACEHOLDER.to_string());
        }
        out.extend(tokenize(part));
    }
    out
}

impl GrammarConfig {
    pub fn validate(&self) -> Result<(), GrammarError> {
        let domains: BTreeSet<&str> = self.intents.iter().map(|i| i.domain.as_str()).collect();
        if domains.len() < 2 {
            return Err(GrammarError::TooFewDomains(domains.len()));
        }
        for p in [("extra_slot_prob", self.extra_slot_prob), ("followup_prob", self.followup_prob)] {
            if !(0.0..=1.0).contains(&p.1) {
                return Err(GrammarError::BadProbability(p.0));
            }
        }
        for (name, pool) in &self.pools {
            if pool.is_empty() {
                return Err(GrammarError::EmptyPool(name.clone()));
            }
            for v in pool {
                if tokenize(v).iter().any(|t| TERMINATORS.contains(&t.as_str())) || tokenize(v).is_empty() {
                    return Err(GrammarError::BadTemplate(v.clone(), "pool value is empty or holds a sentence terminator"));
                }
            }
        }
        for intent in &self.intents {
            if !(intent.weight > 0.0 && intent.weight.is_finite()) {
                return Err(GrammarError::BadWeight(intent.name.clone()));
            }
            if intent.slots.is_empty() {
                return Err(GrammarError::NoSlots(intent.name.clone()));
            }
            let mut seen = BTreeSet::new();
            for s in &intent.slots {
                if !seen.insert(normalize(&s.slot)) {
                    return Err(GrammarError::DuplicateSlot { intent: intent.name.clone(), slot: s.slot.clone() });
                }
                if s.templates.is_empty() {
                    return Err(GrammarError::NoTemplates { intent: intent.name.clone(), slot: s.slot.clone() });
                }
                match &s.pool {
                    Some(p) if !self.pools.contains_key(p) => return Err(GrammarError::UnknownPool(p.clone())),
                    None if normalize(&s.slot) != NONE => {
                        return Err(GrammarError::BadTemplate(s.slot.clone(), "a slot without a value pool must be named `none`"))
                    }
                    _ => {}
                }
                for t in &s.templates {
                    if !(t.weight > 0.0 && t.weight.is_finite()) {
                        return Err(GrammarError::BadWeight(t.text.clone()));
                    }
                    let toks = template_tokens(&t.text);
                    let holes = toks.iter().filter(|x| *x == PLACEHOLDER).count();
                    let want = usize::from(s.pool.is_some());
                    if holes != want {
                        return Err(GrammarError::BadTemplate(t.text.clone(), "placeholder count does not match the slot"));
                    }
                    let terms = toks.iter().filter(|x| TERMINATORS.contains(&x.as_str())).count();
                    if terms != 1 || !toks.last().is_some_and(|x| TERMINATORS.contains(&x.as_str())) {
                        return Err(GrammarError::BadTemplate(t.text.clone(), "needs exactly one terminator, at the end"));
                    }
                }
                DaTriple::new(&intent.name, &s.slot, "x")?;
            }
        }
        for f in &self.followups {
            let ok = self
                .intents
                .iter()
                .find(|i| normalize(&i.name) == normalize(f))
                .is_some_and(|i| i.slots.iter().all(|s| s.pool.is_none()));
            if !ok {
                return Err(GrammarError::BadFollowup(f.clone()));
            }
        }
        Ok(())
    }

    fn spec(&self, intent: &str, slot: &str) -> Option<&SlotSpec> {
        self.intents
            .iter()
            .find(|i| normalize(&i.name) == intent)
            .and_then(|i| i.slots.iter().find(|s| normalize(&s.slot) == slot))
    }

    /// Lemmas of the content words of every template at or below `level`.
    pub fn word_list(&self, level: u8, stopwords: &BTreeSet<String>) -> Result<WordList, crate::text::WordListError> {
        let mut lemmas = BTreeSet::new();
        for i in &self.intents {
            for s in &i.slots {
                for t in s.templates.iter().filter(|t| t.level <= level) {
                    for tok in template_tokens(&t.text) {
                        if tok == PLACEHOLDER || is_punctuation(&tok) || is_number(&tok) || stopwords.contains(&tok) {
                            continue;
                        }
                        let l = lemmatize(&tok);
                        if !stopwords.contains(&l) {
                            lemmas.insert(l);
                        }
                    }
                }
            }
        }
        WordList::new(&alloc::format!("level-{level}"), lemmas)
    }

    /// Realizes every triple with its highest-weight template (first on ties).
    pub fn realize_mode(&self, da: &DialogueAct) -> Option<String> {
        let mut parts = Vec::new();
        for t in da {
            let (i, s, v) = t.key();
            let spec = self.spec(i, s)?;
            let best = spec
                .templates
                .iter()
                .fold(None::<&Template>, |b, x| match b {
                    Some(b) if b.weight >= x.weight => Some(b),
                    _ => Some(x),
                })?;
            parts.push(best.text.replace(PLACEHOLDER, v));
        }
        Some(parts.join(" "))
    }
}

fn weighted<'a, T, R: rand::Rng>(items: &'a [T], weight: impl Fn(&T) -> f64, rng: &mut R) -> &'a T {
    let total: f64 = items.iter().map(&weight).sum();
    let mut x = rng.gen::<f64>() * total;
    for it in items {
        x -= weight(it);
        if x < 0.0 {
            return it;
        }
    }
    items.last().expect("non-empty")
}

/// Draws `n` examples from the grammar. A pure function of `(config, n, seed)`.
pub fn generate_synthetic(config: &GrammarConfig, n: usize, seed_value: u64) -> Result<Corpus, GrammarError> {
    config.validate()?;
    let mut rng = seed::child_rng(seed_value, &[0x9a]);
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let intent = weighted(&config.intents, |i| i.weight, &mut rng);
        let first = rng.gen_range(0..intent.slots.len());
        let mut chosen = alloc::vec![first];
        let valued: Vec<usize> = (0..intent.slots.len()).filter(|&k| k != first && intent.slots[k].pool.is_some()).collect();
        if intent.slots[first].pool.is_some() && !valued.is_empty() && rng.gen::<f64>() < config.extra_slot_prob {
            chosen.push(valued[rng.gen_range(0..valued.len())]);
        }
        let mut da = DialogueAct::new();
        for k in chosen {
            let s = &intent.slots[k];
            let value = match &s.pool {
                Some(p) => {
                    let pool = &config.pools[p];
                    pool[rng.gen_range(0..pool.len())].clone()
                }
                None => NONE.to_string(),
            };
            let slot = if s.pool.is_some() { s.slot.clone() } else { NONE.to_string() };
            da.insert(DaTriple::new(&intent.name, &slot, &value)?);
        }
        if !config.followups.is_empty() && rng.gen::<f64>() < config.followup_prob {
            let f = &config.followups[rng.gen_range(0..config.followups.len())];
            if normalize(f) != normalize(&intent.name) {
                da.insert(DaTriple::new(f, NONE, NONE)?);
            }
        }
        let mut sentences = Vec::with_capacity(da.len());
        for t in &da {
            let (i, s, v) = t.key();
            let spec = config.spec(i, s).expect("triple drawn from the grammar");
            let tpl = weighted(&spec.templates, |t| t.weight, &mut rng);
            sentences.push(tpl.text.replace(PLACEHOLDER, v));
        }
        examples.push(Example::new(da, sentences.join(" ")).expect("non-empty act and utterance"));
    }
    Ok(Corpus::new(examples, Provenance { source: "synthetic".to_string(), seed: Some(seed_value) }))
}

#[derive(Debug, Clone)]
struct Pattern {
    prefix: Vec<String>,
    suffix: Vec<String>,
    /// Normalized pool values; `None` for value-less templates.
    values: Option<BTreeSet<String>>,
    intent: String,
    slot: String,
}

/// Rule-based inverse of a grammar: maps each sentence back to its triple.
#[derive(Debug, Clone)]
pub struct GrammarInverter {
    patterns: Vec<Pattern>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvertError {
    #[error("sentence {0} matches no template")]
    NoMatch(usize),
    #[error("sentence {0} matches more than one triple")]
    Ambiguous(usize),
}

impl GrammarInverter {
    pub fn new(config: &GrammarConfig) -> Self {
        let mut patterns = Vec::new();
        for i in &config.intents {
            for s in &i.slots {
                let values = s.pool.as_ref().map(|p| config.pools[p].iter().map(|v| normalize(&tokenize(v).join(" "))).collect());
                for t in &s.templates {
                    let toks = template_tokens(&t.text);
                    let hole = toks.iter().position(|x| x == PLACEHOLDER);
                    let (prefix, suffix) = match hole {
                        Some(h) => (toks[..h].to_vec(), toks[h + 1..].to_vec()),
                        None => (toks.clone(), Vec::new()),
                    };
                    let slot = if s.pool.is_some() { s.slot.clone() } else { NONE.to_string() };
                    patterns.push(Pattern { prefix, suffix, values: values.clone(), intent: i.name.clone(), slot });
                }
            }
        }
        GrammarInverter { patterns }
    }

    fn sentences(tokens: &[String]) -> Vec<&[String]> {
        let mut out = Vec::new();
        let mut start = 0;
        for (k, t) in tokens.iter().enumerate() {
            if TERMINATORS.contains(&t.as_str()) {
                out.push(&tokens[start..=k]);
                start = k + 1;
            }
        }
        if start < tokens.len() {
            out.push(&tokens[start..]);
        }
        out
    }

    fn match_sentence(&self, sent: &[String]) -> BTreeSet<DaTriple> {
        let mut hits = BTreeSet::new();
        for p in &self.patterns {
            match &p.values {
                None => {
                    if sent == p.prefix.as_slice() {
                        hits.insert(DaTriple::new(&p.intent, NONE, NONE).expect("validated"));
                    }
                }
                Some(values) => {
                    let (a, b) = (p.prefix.len(), p.suffix.len());
                    if sent.len() <= a + b || !sent.starts_with(&p.prefix) || !sent.ends_with(&p.suffix) {
                        continue;
                    }
                    let v = normalize(&sent[a..sent.len() - b].join(" "));
                    if values.contains(&v) {
                        hits.insert(DaTriple::new(&p.intent, &p.slot, &v).expect("validated"));
                    }
                }
            }
        }
        hits
    }

    /// Strict inverse: every sentence must map to exactly one triple.
    pub fn invert(&self, tokens: &[String]) -> Result<DialogueAct, InvertError> {
        let mut da = DialogueAct::new();
        for (k, sent) in Self::sentences(tokens).into_iter().enumerate() {
            let hits = self.match_sentence(sent);
            match hits.len() {
                0 => return Err(InvertError::NoMatch(k)),
                1 => {
                    da.insert(hits.into_iter().next().expect("one hit"));
                }
                _ => return Err(InvertError::Ambiguous(k)),
            }
        }
        Ok(da)
    }

    /// Lenient inverse: unambiguous sentences only, the rest ignored.
    pub fn understand(&self, tokens: &[String]) -> DialogueAct {
        let mut da = DialogueAct::new();
        for sent in Self::sentences(tokens) {
            let hits = self.match_sentence(sent);
            if hits.len() == 1 {
                da.insert(hits.into_iter().next().expect("one hit"));
            }
        }
        da
    }
}

fn tpl(text: &str, weight: f64, level: u8) -> Template {
    Template { text: text.to_string(), weight, level }
}

fn slot(slot: &str, pool: &str, templates: Vec<Template>) -> SlotSpec {
    SlotSpec { slot: slot.to_string(), pool: Some(pool.to_string()), templates }
}

fn bare(templates: Vec<Template>) -> SlotSpec {
    SlotSpec { slot: NONE.to_string(), pool: None, templates }
}

fn intent(name: &str, domain: &str, weight: f64, slots: Vec<SlotSpec>) -> IntentSpec {
    IntentSpec { name: name.to_string(), domain: domain.to_string(), weight, slots }
}

fn pool(values: &[&str]) -> Vec<String> {
    values.iter().map(|v| v.to_string()).collect()
}

/// The shipped restaurant / hotel / train / taxi / general grammar.
pub fn default_grammar() -> GrammarConfig {
    use alloc::vec;
    let mut pools = BTreeMap::new();
    pools.insert("count".to_string(), pool(&["2", "3", "4", "5", "6", "7", "8", "9", "10", "11", "12", "14", "15", "18", "21"]));
    pools.insert("people".to_string(), pool(&["1", "2", "3", "4", "5", "6", "7", "8"]));
    pools.insert("stars".to_string(), pool(&["2", "3", "4", "5"]));
    pools.insert("area".to_string(), pool(&["centre", "north", "south", "east", "west"]));
    pools.insert("food".to_string(), pool(&["italian", "chinese", "indian", "british", "french", "thai", "korean", "spanish"]));
    pools.insert("price".to_string(), pool(&["cheap", "moderate", "expensive"]));
    pools.insert(
        "restaurant".to_string(),
        pool(&["golden wok", "pizza hut", "curry garden", "la mimosa", "yippee noodle bar", "kymmoy", "bedouin", "meghna", "cote"]),
    );
    pools.insert(
        "hotel".to_string(),
        pool(&["acorn guest house", "alpha milton", "lensfield hotel", "allenbell", "aylesbray lodge", "cityroomz", "huntingdon marriott"]),
    );
    pools.insert(
        "place".to_string(),
        pool(&["cambridge", "london", "ely", "norwich", "stansted airport", "peterborough", "leicester", "birmingham"]),
    );
    pools.insert("day".to_string(), pool(&["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]));
    pools.insert("time".to_string(), pool(&["9 am", "10 am", "11 am", "1 pm", "3 pm", "5 pm", "7 pm", "8 pm"]));
    pools.insert("car".to_string(), pool(&["red toyota", "blue ford", "white honda", "black audi", "grey skoda", "yellow tesla"]));

    let intents = vec![
        intent("Inform-Restaurant", "restaurant", 3.0, vec![
            slot("Choice", "count", vec![
                tpl("there are {value} restaurants that match .", 0.45, 1),
                tpl("i have {value} places to eat for you .", 0.30, 1),
                tpl("we have {value} eateries available .", 0.25, 2),
            ]),
            slot("Area", "area", vec![
                tpl("it is in the {value} of town .", 0.40, 1),
                tpl("the restaurant is located in the {value} .", 0.35, 2),
                tpl("you will find it in the {value} area .", 0.25, 1),
            ]),
            slot("Food", "food", vec![
                tpl("it serves {value} food .", 0.45, 1),
                tpl("they offer {value} cuisine .", 0.35, 3),
                tpl("the restaurant has {value} dishes .", 0.20, 1),
            ]),
            slot("Price", "price", vec![
                tpl("it is in the {value} price range .", 0.50, 1),
                tpl("prices are {value} there .", 0.30, 1),
                tpl("the cost is {value} .", 0.20, 2),
            ]),
            slot("Name", "restaurant", vec![
                tpl("the restaurant is called {value} .", 0.55, 1),
                tpl("its name is {value} .", 0.45, 1),
            ]),
        ]),
        intent("Recommend-Restaurant", "restaurant", 1.2, vec![
            slot("Name", "restaurant", vec![
                tpl("{value} is highly acclaimed .", 0.45, 3),
                tpl("you should try {value} .", 0.35, 1),
                tpl("how about {value} ?", 0.20, 1),
            ]),
            slot("Food", "food", vec![
                tpl("i would suggest some {value} food .", 0.50, 1),
                tpl("why not try {value} food ?", 0.50, 1),
            ]),
        ]),
        intent("NoOffer-Restaurant", "restaurant", 0.5, vec![bare(vec![
            tpl("unfortunately , no establishments satisfy those criteria .", 0.50, 3),
            tpl("sorry , there are no restaurants like that .", 0.50, 1),
        ])]),
        intent("Book-Restaurant", "restaurant", 1.0, vec![
            slot("Time", "time", vec![
                tpl("i booked a table for {value} .", 0.50, 1),
                tpl("your table is reserved for {value} .", 0.50, 2),
            ]),
            slot("People", "people", vec![
                tpl("{value} is the size of your party .", 0.45, 1),
                tpl("the table is for {value} people .", 0.55, 1),
            ]),
        ]),
        intent("Inform-Hotel", "hotel", 2.5, vec![
            slot("Choice", "count", vec![
                tpl("{value} is the number of hotels i found .", 0.45, 1),
                tpl("there are {value} hotels available .", 0.55, 1),
            ]),
            slot("Area", "area", vec![
                tpl("the hotel is in the {value} .", 0.55, 1),
                tpl("it is situated in the {value} part of town .", 0.45, 3),
            ]),
            slot("Stars", "stars", vec![
                tpl("{value} is the star rating of this hotel .", 0.45, 1),
                tpl("it has {value} stars .", 0.55, 1),
            ]),
            slot("Price", "price", vec![
                tpl("the hotel is {value} .", 0.50, 1),
                tpl("the rates are {value} .", 0.50, 2),
            ]),
            slot("Name", "hotel", vec![
                tpl("the hotel is called {value} .", 0.50, 1),
                tpl("{value} is the name of the hotel .", 0.50, 1),
            ]),
        ]),
        intent("Recommend-Hotel", "hotel", 1.0, vec![slot("Name", "hotel", vec![
            tpl("i would advocate staying at {value} .", 0.45, 3),
            tpl("you should stay at {value} .", 0.35, 1),
            tpl("i recommend {value} .", 0.20, 1),
        ])]),
        intent("NoOffer-Hotel", "hotel", 0.5, vec![bare(vec![
            tpl("unfortunately , no lodgings satisfy those criteria .", 0.50, 3),
            tpl("sorry , there are no hotels like that .", 0.50, 1),
        ])]),
        intent("Inform-Train", "train", 2.5, vec![
            slot("Depart", "place", vec![
                tpl("{value} is where the train departs from .", 0.45, 1),
                tpl("the train leaves from {value} .", 0.35, 1),
                tpl("it departs from {value} .", 0.20, 1),
            ]),
            slot("Dest", "place", vec![
                tpl("{value} is where the train is going .", 0.45, 1),
                tpl("the train goes to {value} .", 0.35, 1),
                tpl("it arrives in {value} .", 0.20, 1),
            ]),
            slot("Day", "day", vec![
                tpl("the train runs on {value} .", 0.60, 1),
                tpl("it travels on {value} .", 0.40, 1),
            ]),
            slot("Leave", "time", vec![
                tpl("{value} is when the train departs .", 0.45, 1),
                tpl("it leaves at {value} .", 0.55, 1),
            ]),
            slot("Arrive", "time", vec![
                tpl("{value} is when the train arrives .", 0.45, 1),
                tpl("it gets in at {value} .", 0.55, 1),
            ]),
        ]),
        intent("Inform-Taxi", "taxi", 1.5, vec![
            slot("Depart", "place", vec![
                tpl("{value} is where you will be picked up .", 0.45, 1),
                tpl("the taxi will pick you up at {value} .", 0.55, 1),
            ]),
            slot("Dest", "place", vec![
                tpl("{value} is where the taxi will drop you .", 0.45, 1),
                tpl("the taxi will take you to {value} .", 0.55, 1),
            ]),
            slot("Car", "car", vec![
                tpl("a {value} will come for you .", 0.50, 1),
                tpl("look out for a {value} .", 0.50, 1),
            ]),
        ]),
        intent("General-Bye", "general", 0.6, vec![bare(vec![
            tpl("goodbye , have a nice day .", 0.60, 1),
            tpl("thank you for using our service , farewell .", 0.40, 3),
        ])]),
        intent("General-Welcome", "general", 0.4, vec![bare(vec![
            tpl("you are welcome .", 0.60, 1),
            tpl("it was my pleasure to assist .", 0.40, 2),
        ])]),
        intent("General-Reqmore", "general", 0.6, vec![bare(vec![
            tpl("is there anything else i can help with ?", 0.60, 1),
            tpl("can i assist you with anything further ?", 0.40, 2),
        ])]),
    ];
    GrammarConfig {
        pools,
        intents,
        extra_slot_prob: 0.30,
        followup_prob: 0.15,
        followups: vec!["General-Reqmore".to_string()],
    }
}

impl Default for GrammarConfig {
    fn default() -> Self {
        default_grammar()
    }
}
