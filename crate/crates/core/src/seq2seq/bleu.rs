use std::collections::HashMap;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

pub const UNIGRAM_FLOOR: f64 = 1e-9;

fn ngrams(s: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if s.len() >= n {
        for w in s.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus BLEU-4 on a 0–100 scale.
///
/// Unigram precision is unsmoothed unless it has no matches at all, in which
/// case it is floored at [`UNIGRAM_FLOOR`]: the score stays positive but
/// below 1. Higher orders use add-one smoothing. A brevity penalty
/// applies when the hypotheses are shorter than the references overall.
pub fn corpus_bleu(hypotheses: &[Sentence], references: &[Sentence]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::InvalidArgument("BLEU of an empty corpus".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngrams(h, n);
            let rc = ngrams(r, n);
            matches[n - 1] += hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum::<usize>();
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_p = 0.0;
    for n in 0..4 {
        let p = if n == 0 {
            if matches[0] == 0 {
                UNIGRAM_FLOOR
            } else {
                matches[0] as f64 / totals[0] as f64
            }
        } else {
            (matches[n] as f64 + 1.0) / (totals[n] as f64 + 1.0)
        };
        log_p += p.ln() / 4.0;
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * log_p.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(text: &str) -> Sentence {
        text.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_corpus_scores_100() {
        let c = vec![s("a b c d e"), s("x y z w")];
        assert!((corpus_bleu(&c, &c).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_corpus_is_near_zero_but_positive() {
        let b = corpus_bleu(&[s("a b c d")], &[s("w x y z")]).unwrap();
        assert!(b > 0.0 && b < 1.0, "{b}");
    }

    #[test]
    fn empty_and_misaligned_inputs_rejected() {
        assert!(corpus_bleu(&[], &[]).is_err());
        assert!(corpus_bleu(&[s("a")], &[]).is_err());
    }

    #[test]
    fn hand_computed_three_sentences() {
        let hyps = [s("the cat sat on the mat"), s("a dog runs"), s("birds fly high")];
        let refs = [s("the cat sat on a mat"), s("the dog runs fast"), s("birds fly high")];
        // Unigrams: 5/6 + 2/3 + 3/3 = 10/12.
        // Bigrams: {the cat, cat sat, sat on} 3/5; {dog runs} 1/2; 2/2 -> 6/9 -> 7/10.
        // Trigrams: {the cat sat, cat sat on} 2/4; 0/1; 1/1 -> 3/6 -> 4/7.
        // 4-grams: {the cat sat on} 1/3; 0/0; 0/0 -> 1/3 -> 2/4.
        // Lengths 12 vs 13 -> BP = exp(1 - 13/12).
        let p = [10.0f64 / 12.0, 7.0 / 10.0, 4.0 / 7.0, 2.0 / 4.0];
        let geo = (p.iter().map(|x| x.ln()).sum::<f64>() / 4.0).exp();
        let want = 100.0 * (1.0f64 - 13.0 / 12.0).exp() * geo;
        let got = corpus_bleu(&hyps, &refs).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}
