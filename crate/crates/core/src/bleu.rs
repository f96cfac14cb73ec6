//! Corpus-level BLEU-4.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BleuError {
    #[error("{references} references but {hypotheses} hypotheses")]
    LengthMismatch { references: usize, hypotheses: usize },
    #[error("no references")]
    Empty,
}

pub const MAX_ORDER: usize = 4;

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> BTreeMap<Vec<&str>, usize> {
    let mut out = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped n-gram matches and hypothesis n-gram totals per order, plus
/// (hypothesis length, reference length), summed over the corpus.
pub fn corpus_stats<S: AsRef<str>>(references: &[Vec<S>], hypotheses: &[Vec<S>]) -> ([usize; MAX_ORDER], [usize; MAX_ORDER], usize, usize) {
    let mut matches = [0; MAX_ORDER];
    let mut totals = [0; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (r, h) in references.iter().zip(hypotheses) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let rc = ngrams(r, n);
            for (g, c) in ngrams(h, n) {
                totals[n - 1] += c;
                matches[n - 1] += c.min(rc.get(&g).copied().unwrap_or(0));
            }
        }
    }
    (matches, totals, hyp_len, ref_len)
}

/// BLEU-4 with brevity penalty. Unigram precision is unsmoothed; orders 2-4
/// use add-one smoothing, `(m + 1) / (t + 1)`.
pub fn corpus_bleu<S: AsRef<str>>(references: &[Vec<S>], hypotheses: &[Vec<S>]) -> Result<f64, BleuError> {
    if references.len() != hypotheses.len() {
        return Err(BleuError::LengthMismatch { references: references.len(), hypotheses: hypotheses.len() });
    }
    if references.is_empty() {
        return Err(BleuError::Empty);
    }
    let (matches, totals, c, r) = corpus_stats(references, hypotheses);
    if matches[0] == 0 || c == 0 {
        return Ok(0.0);
    }
    let mut log_p = libm::log(matches[0] as f64 / totals[0] as f64);
    for n in 1..MAX_ORDER {
        log_p += libm::log((matches[n] as f64 + 1.0) / (totals[n] as f64 + 1.0));
    }
    let bp = if c < r { libm::exp(1.0 - r as f64 / c as f64) } else { 1.0 };
    Ok(bp * libm::exp(log_p / MAX_ORDER as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;
    use std::vec;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identity_and_disjoint() {
        let r = vec![t("there are 21 restaurants ."), t("it is cheap .")];
        assert!((corpus_bleu(&r, &r).unwrap() - 1.0).abs() < 1e-12);
        let h = vec![t("x y z"), t("q")];
        assert_eq!(corpus_bleu(&r, &h).unwrap(), 0.0);
        assert!(corpus_bleu(&r, &h[..1]).is_err());
    }

    #[test]
    fn hand_computed_fixture() {
        let refs = vec![t("the cat sat on the mat"), t("there are 21 restaurants"), t("it is cheap")];
        let hyps = vec![t("the cat sat on a mat"), t("there are 21 places"), t("it is")];
        // Hand counts:
        // unigrams: s1 5/6, s2 3/4, s3 2/2 -> 10/12
        // bigrams:  s1 the-cat cat-sat sat-on = 3/5, s2 there-are are-21 = 2/3, s3 it-is = 1/1 -> 6/9
        // trigrams: s1 the-cat-sat cat-sat-on = 2/4, s2 there-are-21 = 1/2, s3 0/0 -> 3/6
        // 4-grams:  s1 the-cat-sat-on = 1/3, s2 0/1 -> 1/4
        // lengths: hyp 6+4+2 = 12, ref 6+4+3 = 13
        let p = [10.0 / 12.0, 7.0 / 10.0, 4.0 / 7.0, 2.0 / 5.0];
        let geo = (p.iter().map(|x: &f64| x.ln()).sum::<f64>() / 4.0).exp();
        let expected = (1.0f64 - 13.0 / 12.0).exp() * geo;
        let got = corpus_bleu(&refs, &hyps).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        let (m, tot, c, r) = corpus_stats(&refs, &hyps);
        assert_eq!((m, tot, c, r), ([10, 6, 3, 1], [12, 9, 6, 4], 12, 13));
    }
}
