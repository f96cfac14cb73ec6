//! Dialogue acts: (intent, slot, value) triple sets, their text form, and the
//! set-overlap metrics and rewards computed on them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ACT_MARK: &str = "[ACT]";
pub const RSP_MARK: &str = "[RSP]";
/// Literal used for an absent slot or value.
pub const NONE: &str = "none";

const TRIPLE_SEP: &str = ", ";
const SLOT_SEP: &str = " + ";
const VALUE_SEP: &str = " * ";

/// Weight given to (intent, slot) pairs that were never seen when the table was built.
pub const DEFAULT_IDF: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DaError {
    #[error("dialogue act has no triples")]
    Empty,
    #[error("triple field `{field}` is empty")]
    EmptyField { field: &'static str },
    #[error("triple field `{field}` contains reserved sequence {seq:?}")]
    ReservedSequence { field: &'static str, seq: &'static str },
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: &'static str },
    #[error("idf table needs at least one dialogue act")]
    EmptyIdfSource,
}

/// Lowercases, trims and collapses internal whitespace.
pub fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for (i, w) in s.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&w.to_lowercase());
    }
    out
}

#[derive(Serialize, Deserialize)]
struct RawTriple {
    intent: String,
    slot: String,
    value: String,
}

/// One (intent, slot, value) triple.
///
/// The surface strings are kept as given; equality, ordering and hashing use
/// the normalized form.
#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "RawTriple", into = "RawTriple")]
pub struct DaTriple {
    intent: String,
    slot: String,
    value: String,
    key: (String, String, String),
}

impl TryFrom<RawTriple> for DaTriple {
    type Error = DaError;
    fn try_from(r: RawTriple) -> Result<Self, DaError> {
        DaTriple::new(&r.intent, &r.slot, &r.value)
    }
}

impl From<DaTriple> for RawTriple {
    fn from(t: DaTriple) -> Self {
        RawTriple { intent: t.intent, slot: t.slot, value: t.value }
    }
}

/// Rejects fields whose serialized form would be ambiguous: a reserved
/// sequence inside, or an ending that merges with the following separator.
fn check_field(field: &'static str, s: &str, forbidden: &[&'static str], endings: &[&'static str]) -> Result<String, DaError> {
    let n = normalize(s);
    if n.is_empty() {
        return Err(DaError::EmptyField { field });
    }
    for &seq in [TRIPLE_SEP, ACT_MARK, RSP_MARK].iter().chain(forbidden) {
        if s.contains(seq) || n.contains(seq) {
            return Err(DaError::ReservedSequence { field, seq });
        }
    }
    if let Some(&seq) = endings.iter().find(|e| s.trim().ends_with(**e) || n.ends_with(**e)) {
        return Err(DaError::ReservedSequence { field, seq });
    }
    Ok(n)
}

impl DaTriple {
    pub fn new(intent: &str, slot: &str, value: &str) -> Result<Self, DaError> {
        let ki = check_field("intent", intent, &[SLOT_SEP, VALUE_SEP], &[",", " +"])?;
        let ks = check_field("slot", slot, &[SLOT_SEP, VALUE_SEP], &[",", " *"])?;
        let kv = check_field("value", value, &[], &[])?;
        Ok(DaTriple {
            intent: intent.trim().to_string(),
            slot: slot.trim().to_string(),
            value: value.trim().to_string(),
            key: (ki, ks, kv),
        })
    }

    pub fn intent(&self) -> &str {
        &self.intent
    }
    pub fn slot(&self) -> &str {
        &self.slot
    }
    pub fn value(&self) -> &str {
        &self.value
    }

    /// Normalized (intent, slot, value).
    pub fn key(&self) -> (&str, &str, &str) {
        (&self.key.0, &self.key.1, &self.key.2)
    }

    /// Normalized (intent, slot) pair, the unit the idf table is keyed on.
    pub fn pair(&self) -> (&str, &str) {
        (&self.key.0, &self.key.1)
    }

    pub fn has_value(&self) -> bool {
        self.key.2 != NONE
    }
}

impl PartialEq for DaTriple {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for DaTriple {}
impl PartialOrd for DaTriple {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for DaTriple {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}
impl core::hash::Hash for DaTriple {
    fn hash<H: core::hash::Hasher>(&self, state: &mut H) {
        self.key.hash(state)
    }
}

impl fmt::Debug for DaTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.intent, self.slot, self.value)
    }
}

impl fmt::Display for DaTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}{}{}", self.intent, SLOT_SEP, self.slot, VALUE_SEP, self.value)
    }
}

/// A set of triples. Iteration is in canonical (normalized lexicographic) order.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DialogueAct {
    triples: BTreeSet<DaTriple>,
}

impl fmt::Debug for DialogueAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.triples.iter()).finish()
    }
}

impl FromIterator<DaTriple> for DialogueAct {
    fn from_iter<I: IntoIterator<Item = DaTriple>>(iter: I) -> Self {
        DialogueAct { triples: iter.into_iter().collect() }
    }
}

impl<'a> IntoIterator for &'a DialogueAct {
    type Item = &'a DaTriple;
    type IntoIter = alloc::collections::btree_set::Iter<'a, DaTriple>;
    fn into_iter(self) -> Self::IntoIter {
        self.triples.iter()
    }
}

impl DialogueAct {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds an act from `(intent, slot, value)` string triples.
    pub fn from_strs(triples: &[(&str, &str, &str)]) -> Result<Self, DaError> {
        triples.iter().map(|(i, s, v)| DaTriple::new(i, s, v)).collect()
    }

    /// Inserts a triple; returns false if an equal (normalized) triple was present.
    pub fn insert(&mut self, t: DaTriple) -> bool {
        self.triples.insert(t)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
    pub fn iter(&self) -> impl Iterator<Item = &DaTriple> {
        self.triples.iter()
    }
    pub fn contains(&self, t: &DaTriple) -> bool {
        self.triples.contains(t)
    }
    pub fn triples(&self) -> &BTreeSet<DaTriple> {
        &self.triples
    }

    /// Distinct normalized intents.
    pub fn intents(&self) -> BTreeSet<&str> {
        self.triples.iter().map(|t| t.key.0.as_str()).collect()
    }
}

/// Renders `[ACT] i + s * v, i + s * v [RSP]` with triples in canonical order.
pub fn serialize_da(da: &DialogueAct) -> Result<String, DaError> {
    if da.is_empty() {
        return Err(DaError::Empty);
    }
    let mut out = String::from(ACT_MARK);
    out.push(' ');
    for (i, t) in da.iter().enumerate() {
        if i > 0 {
            out.push_str(TRIPLE_SEP);
        }
        out.push_str(&t.to_string());
    }
    out.push(' ');
    out.push_str(RSP_MARK);
    Ok(out)
}

/// Inverse of [`serialize_da`]. Duplicate triples collapse into one.
pub fn parse_da(text: &str) -> Result<DialogueAct, DaError> {
    let head = "[ACT] ";
    let tail = " [RSP]";
    if !text.starts_with(head) {
        return Err(DaError::Parse { offset: 0, msg: "expected `[ACT] `" });
    }
    if !text.ends_with(tail) || text.len() < head.len() + tail.len() {
        if text.trim_end() == "[ACT] [RSP]" || text.trim_end() == "[ACT]" {
            return Err(DaError::Parse { offset: head.len(), msg: "empty act list" });
        }
        return Err(DaError::Parse { offset: text.len(), msg: "expected trailing ` [RSP]`" });
    }
    let body = &text[head.len()..text.len() - tail.len()];
    if body.trim().is_empty() {
        return Err(DaError::Parse { offset: head.len(), msg: "empty act list" });
    }
    let mut da = DialogueAct::new();
    let mut offset = head.len();
    for seg in body.split(TRIPLE_SEP) {
        let (intent, rest) = seg
            .split_once(SLOT_SEP)
            .ok_or(DaError::Parse { offset, msg: "expected ` + ` after intent" })?;
        let (slot, value) = rest.split_once(VALUE_SEP).ok_or(DaError::Parse {
            offset: offset + intent.len() + SLOT_SEP.len(),
            msg: "expected ` * ` after slot",
        })?;
        let t = DaTriple::new(intent, slot, value)
            .map_err(|_| DaError::Parse { offset, msg: "invalid triple" })?;
        da.insert(t);
        offset += seg.len() + TRIPLE_SEP.len();
    }
    Ok(da)
}

/// Partition of reference and prediction into true positives, false positives and false negatives.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchResult {
    pub tp: BTreeSet<DaTriple>,
    pub fp: BTreeSet<DaTriple>,
    pub fn_: BTreeSet<DaTriple>,
}

pub fn match_triples(reference: &DialogueAct, predicted: &DialogueAct) -> MatchResult {
    MatchResult {
        tp: reference.triples.intersection(&predicted.triples).cloned().collect(),
        fp: predicted.triples.difference(&reference.triples).cloned().collect(),
        fn_: reference.triples.difference(&predicted.triples).cloned().collect(),
    }
}

fn counts(reference: &DialogueAct, predicted: &DialogueAct) -> (usize, usize, usize) {
    let tp = reference.triples.intersection(&predicted.triples).count();
    (tp, predicted.len() - tp, reference.len() - tp)
}

/// `2|TP| / (2|TP| + |FP| + |FN|)`; 1.0 for two empty acts.
pub fn f1(reference: &DialogueAct, predicted: &DialogueAct) -> f64 {
    let (tp, fp, fn_) = counts(reference, predicted);
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// `|TP| / (|TP| + |FP| + |FN|)`; 1.0 for two empty acts.
pub fn accuracy(reference: &DialogueAct, predicted: &DialogueAct) -> f64 {
    let (tp, fp, fn_) = counts(reference, predicted);
    let denom = tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        tp as f64 / denom as f64
    }
}

/// Inverse document frequency of (intent, slot) pairs, one "document" per act.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    entries: BTreeMap<(String, String), f64>,
    corpus_size: usize,
}

impl IdfTable {
    /// `idf = ln(|D| / (1 + df)) + 1`.
    pub fn build<'a, I>(das: I) -> Result<Self, DaError>
    where
        I: IntoIterator<Item = &'a DialogueAct>,
    {
        let mut df: BTreeMap<(String, String), usize> = BTreeMap::new();
        let mut n = 0usize;
        for da in das {
            n += 1;
            let pairs: BTreeSet<(&str, &str)> = da.iter().map(|t| t.pair()).collect();
            for (i, s) in pairs {
                *df.entry((i.to_string(), s.to_string())).or_insert(0) += 1;
            }
        }
        if n == 0 {
            return Err(DaError::EmptyIdfSource);
        }
        let entries = df
            .into_iter()
            .map(|(k, c)| (k, libm::log(n as f64 / (1.0 + c as f64)) + 1.0))
            .collect();
        Ok(IdfTable { entries, corpus_size: n })
    }

    /// Weight for a normalized (intent, slot) pair; [`DEFAULT_IDF`] when unseen.
    pub fn weight(&self, intent: &str, slot: &str) -> f64 {
        // Callers hand in normalized keys from `DaTriple::pair`.
        self.entries
            .get(&(String::from(intent), String::from(slot)))
            .copied()
            .unwrap_or(DEFAULT_IDF)
    }

    pub fn get(&self, intent: &str, slot: &str) -> Option<f64> {
        self.entries.get(&(normalize(intent), normalize(slot))).copied()
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }
    pub fn len(&self) -> usize {
        self.entries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
    pub fn iter(&self) -> impl Iterator<Item = (&(String, String), &f64)> {
        self.entries.iter()
    }
}

pub fn build_idf_table(das: &[DialogueAct]) -> Result<IdfTable, DaError> {
    IdfTable::build(das.iter())
}

/// Task reward: F1 scaled by the mean idf of the true-positive pairs; 0 without true positives.
pub fn reward(reference: &DialogueAct, predicted: &DialogueAct, idf: &IdfTable) -> f64 {
    let tp: Vec<&DaTriple> = reference.triples.intersection(&predicted.triples).collect();
    if tp.is_empty() {
        return 0.0;
    }
    let mean_idf = tp.iter().map(|t| {
        let (i, s) = t.pair();
        idf.weight(i, s)
    }).sum::<f64>()
        / tp.len() as f64;
    f1(reference, predicted) * mean_idf
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::vec;

    fn t(i: &str, s: &str, v: &str) -> DaTriple {
        DaTriple::new(i, s, v).unwrap()
    }

    fn da(ts: &[DaTriple]) -> DialogueAct {
        ts.iter().cloned().collect()
    }

    #[test]
    fn serialize_two_triples() {
        let d = DialogueAct::from_strs(&[
            ("Inform-Restaurant", "Choice", "21"),
            ("Inform-Restaurant", "Area", "centre of town"),
        ])
        .unwrap();
        // canonical order sorts `area` before `choice`
        assert_eq!(
            serialize_da(&d).unwrap(),
            "[ACT] Inform-Restaurant + Area * centre of town, Inform-Restaurant + Choice * 21 [RSP]"
        );
        assert_eq!(parse_da(&serialize_da(&d).unwrap()).unwrap(), d);
    }

    #[test]
    fn serialize_none_triple() {
        let d = DialogueAct::from_strs(&[("NoOffer-Hotel", "none", "none")]).unwrap();
        assert_eq!(serialize_da(&d).unwrap(), "[ACT] NoOffer-Hotel + none * none [RSP]");
    }

    #[test]
    fn serialize_empty_fails() {
        assert_eq!(serialize_da(&DialogueAct::new()), Err(DaError::Empty));
    }

    #[test]
    fn parse_single() {
        let d = parse_da("[ACT] Inform-Restaurant + Choice * 21 [RSP]").unwrap();
        assert_eq!(d, da(&[t("Inform-Restaurant", "Choice", "21")]));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_da("[ACT] [RSP]"), Err(DaError::Parse { offset: 6, .. })));
        assert!(matches!(parse_da("Inform + a * b [RSP]"), Err(DaError::Parse { offset: 0, .. })));
        assert!(matches!(parse_da("[ACT] Inform + a * b"), Err(DaError::Parse { .. })));
        let e = parse_da("[ACT] Inform + a * b, Request + b [RSP]").unwrap_err();
        assert!(matches!(e, DaError::Parse { offset: 32, .. }), "{e:?}");
        assert!(matches!(parse_da("[ACT] Inform a * b [RSP]"), Err(DaError::Parse { offset: 6, .. })));
    }

    #[test]
    fn parse_dedupes() {
        let d = parse_da("[ACT] Inform + Area * north, inform + area *  North [RSP]").unwrap();
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn reserved_sequences_rejected() {
        assert!(DaTriple::new("a, b", "s", "v").is_err());
        assert!(DaTriple::new("a + b", "s", "v").is_err());
        assert!(DaTriple::new("a", "s * x", "v").is_err());
        assert!(DaTriple::new("", "s", "v").is_err());
        assert!(DaTriple::new("a", "s", "[RSP]").is_err());
    }

    #[test]
    fn match_and_scores() {
        let (t1, t2, t3) = (t("A", "x", "1"), t("A", "y", "2"), t("B", "z", "3"));
        let r = da(&[t1.clone(), t2.clone()]);
        let p = da(&[t1.clone(), t3.clone()]);
        let m = match_triples(&r, &p);
        assert_eq!(m.tp.into_iter().collect::<Vec<_>>(), vec![t1.clone()]);
        assert_eq!(m.fn_.into_iter().collect::<Vec<_>>(), vec![t2.clone()]);
        assert_eq!(m.fp.into_iter().collect::<Vec<_>>(), vec![t3.clone()]);
        assert_eq!(f1(&r, &p), 0.5);
        assert!((accuracy(&r, &p) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1(&r, &r), 1.0);
        assert_eq!(accuracy(&r, &r), 1.0);
        let q = da(&[t3]);
        assert_eq!(f1(&r, &q), 0.0);
        assert_eq!(accuracy(&r, &q), 0.0);
        assert!(match_triples(&r, &q).tp.is_empty());
        let same = match_triples(&r, &r);
        assert!(same.fp.is_empty() && same.fn_.is_empty());
        assert_eq!(f1(&DialogueAct::new(), &DialogueAct::new()), 1.0);
        assert_eq!(accuracy(&DialogueAct::new(), &DialogueAct::new()), 1.0);
    }

    #[test]
    fn idf_formula() {
        // |D| = e - 1 is not an integer; use the formula directly on |D| = 2, df = 2.
        let a = da(&[t("A", "x", "1"), t("B", "y", "1")]);
        let b = da(&[t("A", "x", "2")]);
        let table = build_idf_table(&[a.clone(), b.clone()]).unwrap();
        let ax = table.get("A", "x").unwrap();
        let by = table.get("B", "y").unwrap();
        assert!((ax - (libm::log(2.0 / 3.0) + 1.0)).abs() < 1e-15);
        assert!((by - (libm::log(2.0 / 2.0) + 1.0)).abs() < 1e-15);
        assert!(by > ax);
        assert!(ax > 0.0);
        assert_eq!(table.corpus_size(), 2);
        assert!(build_idf_table(&[]).is_err());
        // the e-1 case evaluated symbolically
        let e = core::f64::consts::E;
        let v = libm::log((e - 1.0) / e) + 1.0;
        assert!((v - 0.541_324_854_612_918_1).abs() < 1e-12);
    }

    #[test]
    fn idf_equal_df_equal_weight() {
        let a = da(&[t("A", "x", "1"), t("B", "y", "1")]);
        let table = build_idf_table(&[a]).unwrap();
        assert_eq!(table.get("A", "x"), table.get("B", "y"));
    }

    #[test]
    fn reward_cases() {
        let t1 = t("A", "x", "1");
        let t2 = t("B", "y", "2");
        let mut entries = BTreeMap::new();
        entries.insert(("a".into(), "x".into()), 1.0);
        entries.insert(("b".into(), "y".into()), 3.0);
        let idf = IdfTable { entries, corpus_size: 4 };
        let r = da(&[t1.clone(), t2.clone()]);
        let p = da(core::slice::from_ref(&t1));
        assert!((reward(&r, &p, &idf) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(reward(&r, &da(&[t("C", "z", "0")]), &idf), 0.0);
        assert!((reward(&r, &r, &idf) - 2.0).abs() < 1e-15);
    }

    fn arb_field() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9][a-zA-Z0-9 ,+*?-]{0,10}".prop_filter("reserved", |s| {
            !s.contains(", ") && !s.contains(" + ") && !s.contains(" * ") && !s.trim().is_empty()
        })
    }

    fn arb_triple() -> impl Strategy<Value = DaTriple> {
        (arb_field(), arb_field(), arb_field()).prop_filter_map("valid", |(i, s, v)| DaTriple::new(&i, &s, &v).ok())
    }

    fn arb_da() -> impl Strategy<Value = DialogueAct> {
        proptest::collection::vec(arb_triple(), 1..5).prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #[test]
        fn roundtrip(d in arb_da()) {
            let s = serialize_da(&d).unwrap();
            prop_assert_eq!(parse_da(&s).unwrap(), d);
        }

        #[test]
        fn metric_properties(a in proptest::collection::vec(arb_triple(), 0..4), b in proptest::collection::vec(arb_triple(), 0..4)) {
            let a: DialogueAct = a.into_iter().collect();
            let b: DialogueAct = b.into_iter().collect();
            prop_assert_eq!(f1(&a, &b), f1(&b, &a));
            let (acc, f) = (accuracy(&a, &b), f1(&a, &b));
            prop_assert!(0.0 <= acc && acc <= f && f <= 1.0);
            let m = match_triples(&a, &b);
            prop_assert_eq!(m.tp.len() + m.fn_.len(), a.len());
            prop_assert_eq!(m.tp.len() + m.fp.len(), b.len());
            let idf = IdfTable::build([&a, &b]).unwrap_or(IdfTable { entries: BTreeMap::new(), corpus_size: 0 });
            if f == 0.0 {
                prop_assert_eq!(reward(&a, &b, &idf), 0.0);
            }
        }
    }
}
