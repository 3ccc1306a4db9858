//! Corpus-level BLEU with clipped n-gram precision and brevity penalty.

use std::collections::HashMap;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub const DEFAULT_SMOOTHING_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothing {
    None,
    /// Replace a zero matched count by this value.
    Epsilon(f64),
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::Epsilon(DEFAULT_SMOOTHING_EPSILON)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// `bleu[n - 1]` is BLEU-n.
    pub bleu: Vec<f64>,
    pub bp: f64,
    /// Clipped precision per order; an order absent from both sides
    /// reports 0 here and is skipped in the scores.
    pub precisions: Vec<f64>,
    pub n_sentences: usize,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuReport {
    pub fn bleu4(&self) -> f64 {
        self.bleu.get(3).copied().unwrap_or(0.0)
    }

    /// `{bleu1…bleuN, bp, precisions, n_sentences}`.
    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        for (i, b) in self.bleu.iter().enumerate() {
            map.insert(format!("bleu{}", i + 1), json!(b));
        }
        map.insert("bp".into(), json!(self.bp));
        map.insert("precisions".into(), json!(self.precisions));
        map.insert("n_sentences".into(), json!(self.n_sentences));
        Value::Object(map)
    }
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU-1…BLEU-`max_n` over paired token sequences (without BOS, EOS or
/// padding).
pub fn corpus_bleu<T: AsRef<str>>(
    hypotheses: &[Vec<T>],
    references: &[Vec<T>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<BleuReport> {
    if hypotheses.is_empty() {
        return Err(Error::Contract("BLEU over an empty corpus".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::Contract("BLEU order must be at least 1".into()));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let mut ref_total = vec![0usize; max_n];
    for (hyp, reference) in hypotheses.iter().zip(references) {
        for n in 1..=max_n {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            ref_total[n - 1] += r.values().sum::<usize>();
            for (gram, &count) in &h {
                matched[n - 1] += count.min(r.get(gram).copied().unwrap_or(0));
                total[n - 1] += count;
            }
        }
    }
    let precisions: Vec<f64> = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| match (m, smoothing) {
            (_, _) if t == 0 => 0.0,
            (0, Smoothing::Epsilon(eps)) => eps / t as f64,
            _ => m as f64 / t as f64,
        })
        .collect();
    let hyp_len: usize = hypotheses.iter().map(Vec::len).sum();
    let ref_len: usize = references.iter().map(Vec::len).sum();
    let bp = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    // An order with no n-grams on either side carries no evidence and is
    // left out of the geometric mean rather than counted as a miss.
    let mut bleu = Vec::with_capacity(max_n);
    let (mut log_sum, mut orders, mut zero) = (0.0, 0usize, false);
    for n in 0..max_n {
        if total[n] > 0 || ref_total[n] > 0 {
            log_sum += precisions[n].ln();
            orders += 1;
            zero |= precisions[n] == 0.0;
        }
        let score = if bp == 0.0 || zero || orders == 0 { 0.0 } else { bp * (log_sum / orders as f64).exp() };
        bleu.push(score);
    }
    Ok(BleuReport { bleu, bp, precisions, n_sentences: hypotheses.len(), hyp_len, ref_len })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identity_is_one() {
        let c = vec![toks("a b c d e"), toks("x y z w")];
        let r = corpus_bleu(&c, &c, 4, Smoothing::None).unwrap();
        assert_eq!(r.bleu, vec![1.0; 4]);
        assert_eq!(r.bp, 1.0);
    }

    #[test]
    fn four_token_example() {
        let h = vec![toks("a b c d")];
        let r = vec![toks("a b c e")];
        let plain = corpus_bleu(&h, &r, 4, Smoothing::None).unwrap();
        assert_eq!(plain.precisions, vec![0.75, 2.0 / 3.0, 0.5, 0.0]);
        assert_eq!(plain.bleu4(), 0.0);
        let smooth = corpus_bleu(&h, &r, 4, Smoothing::default()).unwrap();
        let expected = (0.75f64 * (2.0 / 3.0) * 0.5 * 1e-9).powf(0.25);
        assert!(smooth.bleu4() > 0.0);
        assert!((smooth.bleu4() - expected).abs() < 1e-12);
    }

    #[test]
    fn orders_missing_on_both_sides_are_skipped() {
        let c = vec![toks("a b"), toks("c d e")];
        let r = corpus_bleu(&c, &c, 4, Smoothing::default()).unwrap();
        assert_eq!(r.bleu, vec![1.0; 4]);
        // a hypothesis too short for trigrams is still penalised when the reference has them
        let short = corpus_bleu(&[toks("a b")], &[toks("a b c")], 4, Smoothing::None).unwrap();
        assert_eq!(short.bleu[2], 0.0);
    }

    #[test]
    fn clipping_and_brevity() {
        let clipped = corpus_bleu(&[toks("a a a a")], &[toks("a b c d")], 1, Smoothing::None).unwrap();
        assert_eq!(clipped.precisions[0], 0.25);
        let short = corpus_bleu(&[toks("a b")], &[toks("a b c d")], 1, Smoothing::None).unwrap();
        assert!((short.bp - (-1f64).exp()).abs() < 1e-15);
        assert!((short.bleu[0] - (-1f64).exp()).abs() < 1e-15);
        let empty = corpus_bleu(&[vec![]], &[toks("a")], 1, Smoothing::default()).unwrap();
        assert_eq!((empty.bp, empty.bleu[0]), (0.0, 0.0));
    }

    #[test]
    fn disjoint_tokens() {
        let r = corpus_bleu(&[toks("a b")], &[toks("c d")], 4, Smoothing::None).unwrap();
        assert_eq!(r.bleu[0], 0.0);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let empty: Vec<Vec<String>> = Vec::new();
        assert!(matches!(corpus_bleu(&empty, &empty, 4, Smoothing::None), Err(Error::Contract(_))));
    }

    #[test]
    fn json_fields() {
        let c = vec![toks("a b")];
        let v = corpus_bleu(&c, &c, 4, Smoothing::default()).unwrap().to_json();
        for key in ["bleu1", "bleu2", "bleu3", "bleu4", "bp", "precisions", "n_sentences"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
