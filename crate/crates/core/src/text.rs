//! Word tokenization, a rule-based lemmatizer, stop words and word lists.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const STOPWORDS_TXT: &str = include_str!("../data/stopwords.txt");

/// Irregular forms the suffix rules cannot reach.
const EXCEPTIONS: &[(&str, &str)] = &[
    ("better", "good"),
    ("buses", "bus"),
    ("best", "good"),
    ("worse", "bad"),
    ("worst", "bad"),
    ("children", "child"),
    ("men", "man"),
    ("women", "woman"),
    ("people", "person"),
    ("feet", "foot"),
    ("went", "go"),
    ("gone", "go"),
    ("left", "leave"),
    ("leaving", "leave"),
    ("arriving", "arrive"),
    ("arrives", "arrive"),
    ("arrived", "arrive"),
    ("leaves", "leave"),
    ("taking", "take"),
    ("took", "take"),
    ("taken", "take"),
    ("making", "make"),
    ("made", "make"),
    ("having", "have"),
    ("had", "have"),
    ("has", "have"),
    ("is", "be"),
    ("are", "be"),
    ("was", "be"),
    ("were", "be"),
    ("been", "be"),
    ("being", "be"),
    ("am", "be"),
    ("does", "do"),
    ("did", "do"),
    ("done", "do"),
    ("says", "say"),
    ("said", "say"),
    ("found", "find"),
    ("got", "get"),
    ("bought", "buy"),
    ("paid", "pay"),
    ("ran", "run"),
    ("running", "run"),
    ("sat", "sit"),
    ("stayed", "stay"),
    ("staying", "stay"),
    ("would", "would"),
    ("could", "could"),
    ("should", "should"),
    ("nice", "nice"),
    ("price", "price"),
    ("place", "place"),
    ("centre", "centre"),
    ("house", "house"),
    ("guesthouse", "guesthouse"),
    ("guesthouses", "guesthouse"),
    ("prices", "price"),
    ("places", "place"),
    ("houses", "house"),
    ("centres", "centre"),
    ("serves", "serve"),
    ("served", "serve"),
    ("serving", "serve"),
    ("arrive", "arrive"),
    ("leave", "leave"),
    ("serve", "serve"),
    ("bus", "bus"),
    ("this", "this"),
    ("always", "always"),
    ("towards", "towards"),
    ("perhaps", "perhaps"),
    ("news", "news"),
    ("different", "different"),
    ("under", "under"),
    ("after", "after"),
    ("other", "other"),
    ("never", "never"),
    ("over", "over"),
    ("offer", "offer"),
    ("order", "order"),
    ("number", "number"),
    ("water", "water"),
    ("dinner", "dinner"),
    ("corner", "corner"),
    ("matter", "matter"),
];

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Lowercases, splits on whitespace and makes every punctuation character its own token.
pub fn tokenize(utterance: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in utterance.split_whitespace() {
        let mut cur = String::new();
        for c in chunk.chars() {
            if is_punct(c) {
                if !cur.is_empty() {
                    out.push(core::mem::take(&mut cur));
                }
                out.push(c.to_lowercase().collect());
            } else {
                cur.extend(c.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// True for tokens made only of punctuation characters.
pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && token.chars().all(is_punct)
}

/// True for tokens made only of ASCII digits.
pub fn is_number(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| c.is_ascii_digit())
}

fn has_vowel(s: &str) -> bool {
    s.chars().any(|c| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y'))
}

fn exception(token: &str) -> Option<&'static str> {
    EXCEPTIONS.iter().find(|(w, _)| *w == token).map(|(_, l)| *l)
}

fn undouble(stem: &str) -> &str {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 4 && b[n - 1] == b[n - 2] && !matches!(b[n - 1], b'l' | b's' | b'z' | b'e' | b'o') {
        &stem[..n - 1]
    } else {
        stem
    }
}

fn strip_once(token: &str) -> Option<&str> {
    let ok = |stem: &str| stem.chars().count() >= 3 && has_vowel(stem);
    for suf in ["sses", "shes", "ches", "xes", "zes"] {
        if token.ends_with(suf) {
            return Some(&token[..token.len() - 2]);
        }
    }
    if let Some(stem) = token.strip_suffix("ing") {
        if ok(stem) {
            return Some(undouble(stem));
        }
    }
    if let Some(stem) = token.strip_suffix("ed") {
        if ok(stem) {
            return Some(undouble(stem));
        }
    }
    if let Some(stem) = token.strip_suffix("est") {
        if ok(stem) && stem.chars().count() >= 4 {
            return Some(undouble(stem));
        }
    }
    if let Some(stem) = token.strip_suffix("er") {
        if ok(stem) && stem.chars().count() >= 4 {
            return Some(undouble(stem));
        }
    }
    if let Some(stem) = token.strip_suffix('s') {
        let tail_ok = !(stem.ends_with('s') || stem.ends_with('u') || stem.ends_with('i'));
        if tail_ok && stem.chars().count() >= 2 && has_vowel(stem) {
            return Some(stem);
        }
    }
    None
}

/// Rule-based lemma: exception table first, then plural, `-ing`, `-ed`,
/// `-est`, `-er` suffix stripping, applied until nothing changes.
pub fn lemmatize(token: &str) -> String {
    let mut cur = token.to_string();
    // Every rule strictly shortens the word, so this terminates.
    loop {
        if let Some(l) = exception(&cur) {
            return l.to_string();
        }
        if !cur.chars().all(|c| c.is_alphabetic()) {
            return cur;
        }
        if let Some(stem) = cur.strip_suffix("ies") {
            if stem.chars().count() >= 2 {
                cur = alloc::format!("{stem}y");
                continue;
            }
        }
        match strip_once(&cur) {
            Some(next) if next.len() < cur.len() => cur = next.to_string(),
            _ => return cur,
        }
    }
}

/// The shipped stop-word list.
pub fn default_stopwords() -> BTreeSet<String> {
    parse_list(STOPWORDS_TXT).into_iter().collect()
}

/// Parses one entry per line, skipping blanks and `#` comments.
pub fn parse_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| l.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WordListError {
    #[error("word list `{0}` is empty")]
    Empty(String),
    #[error("word list `{label}` line {line}: entry {entry:?} is not a single lowercase token")]
    BadEntry { label: String, line: usize, entry: String },
}

/// A vocabulary level: the set of lemmas a user is assumed to understand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordList {
    pub label: String,
    lemmas: BTreeSet<String>,
}

impl WordList {
    pub fn new<I, S>(label: &str, lemmas: I) -> Result<Self, WordListError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        for (i, l) in lemmas.into_iter().enumerate() {
            let l = l.as_ref();
            if l.is_empty() || l.chars().any(|c| c.is_whitespace() || c.is_uppercase()) {
                return Err(WordListError::BadEntry { label: label.to_string(), line: i + 1, entry: l.to_string() });
            }
            set.insert(l.to_string());
        }
        if set.is_empty() {
            return Err(WordListError::Empty(label.to_string()));
        }
        Ok(WordList { label: label.to_string(), lemmas: set })
    }

    /// Parses the one-lemma-per-line format. Entries must already be lowercase.
    pub fn parse(label: &str, text: &str) -> Result<Self, WordListError> {
        let mut set = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            if l.chars().any(|c| c.is_whitespace() || c.is_uppercase()) {
                return Err(WordListError::BadEntry { label: label.to_string(), line: i + 1, entry: l.to_string() });
            }
            set.insert(l.to_string());
        }
        if set.is_empty() {
            return Err(WordListError::Empty(label.to_string()));
        }
        Ok(WordList { label: label.to_string(), lemmas: set })
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.lemmas.contains(lemma)
    }
    pub fn len(&self) -> usize {
        self.lemmas.len()
    }
    pub fn is_empty(&self) -> bool {
        self.lemmas.is_empty()
    }
    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.lemmas.iter().map(String::as_str)
    }

    /// One lemma per line, preceded by a comment naming the level.
    pub fn to_text(&self) -> String {
        let mut s = alloc::format!("# {}\n", self.label);
        for l in &self.lemmas {
            s.push_str(l);
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::vec;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("There are 21 restaurants."), vec!["there", "are", "21", "restaurants", "."]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("centre-of-town"), vec!["centre", "-", "of", "-", "town"]);
        assert_eq!(tokenize("  Hi ,  you?"), vec!["hi", ",", "you", "?"]);
    }

    #[test]
    fn lemma_examples() {
        assert_eq!(lemmatize("restaurants"), "restaurant");
        assert_eq!(lemmatize("better"), "good");
        assert_eq!(lemmatize("centre"), "centre");
        assert_eq!(lemmatize("booked"), "book");
        assert_eq!(lemmatize("booking"), "book");
        assert_eq!(lemmatize("cheaper"), "cheap");
        assert_eq!(lemmatize("cheapest"), "cheap");
        assert_eq!(lemmatize("buses"), "bus");
        assert_eq!(lemmatize("dresses"), "dress");
        assert_eq!(lemmatize("cities"), "city");
        assert_eq!(lemmatize("stars"), "star");
        assert_eq!(lemmatize("thing"), "thing");
        assert_eq!(lemmatize("red"), "red");
        assert_eq!(lemmatize("21"), "21");
    }

    #[test]
    fn exception_targets_are_fixpoints() {
        for (_, l) in EXCEPTIONS {
            assert_eq!(lemmatize(l), *l, "{l}");
        }
    }

    #[test]
    fn stopwords_shipped() {
        let s = default_stopwords();
        assert!(s.len() > 130);
        assert!(s.contains("the") && s.contains("is"));
        assert!(s.iter().all(|w| w.chars().all(|c| !c.is_uppercase())));
    }

    #[test]
    fn wordlist_parse() {
        let wl = WordList::parse("A1", "# level a1\ncheap\n\neat # verb\n").unwrap();
        assert_eq!(wl.len(), 2);
        assert!(wl.contains("eat"));
        assert!(matches!(WordList::parse("x", "# nothing\n"), Err(WordListError::Empty(_))));
        assert!(matches!(WordList::parse("x", "ok\nTwo Words\n"), Err(WordListError::BadEntry { line: 2, .. })));
        assert_eq!(WordList::parse("A1", &wl.to_text()).unwrap(), wl);
    }

    proptest! {
        #[test]
        fn lemmatize_idempotent(w in "[a-z]{1,12}") {
            let once = lemmatize(&w);
            prop_assert_eq!(lemmatize(&once), once);
        }

        #[test]
        fn tokens_non_empty(s in "\\PC{0,40}") {
            prop_assert!(tokenize(&s).iter().all(|t| !t.is_empty() && !t.contains(char::is_whitespace)));
        }
    }
}
