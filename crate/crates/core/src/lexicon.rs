//! Style lexicons from the log-odds ratio with an informative Dirichlet prior,
//! and the two indicator features the classifier reads per token.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use bst_kernel::Tensor;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl, Style, StyledCorpus, Vocabulary};
use crate::error::{Error, Result};

/// Word counts `y_w` and their total `n`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CountTable {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl CountTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, word: &str, n: u64) {
        *self.counts.entry(word.to_string()).or_insert(0) += n;
        self.total += n;
    }

    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a Vec<String>>) -> Self {
        let mut t = Self::new();
        for s in sentences {
            for w in s {
                t.add(w, 1);
            }
        }
        t
    }

    pub fn get(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    pub fn merged(&self, other: &CountTable) -> CountTable {
        let mut out = self.clone();
        for (w, &c) in &other.counts {
            out.add(w, c);
        }
        out
    }
}

impl FromIterator<(String, u64)> for CountTable {
    fn from_iter<I: IntoIterator<Item = (String, u64)>>(iter: I) -> Self {
        let mut t = Self::new();
        for (w, c) in iter {
            t.add(&w, c);
        }
        t
    }
}

/// The prior: per-word pseudo-counts `α_w` from a background corpus whose
/// total is `α_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogOddsConfig {
    pub background: CountTable,
}

impl LogOddsConfig {
    /// Uses the union of both style corpora as background.
    pub fn union_background(i: &CountTable, j: &CountTable) -> Self {
        Self {
            background: i.merged(j),
        }
    }
}

/// `δ_w` for every word seen in either table, with `α_w` floored at 1.
pub fn log_odds_delta(counts_i: &CountTable, counts_j: &CountTable, config: &LogOddsConfig) -> Result<BTreeMap<String, f64>> {
    let alpha_0 = config.background.total() as f64;
    let words: BTreeSet<&str> = counts_i.words().chain(counts_j.words()).collect();
    let log_odds = |word: &str, y: f64, n: f64, alpha: f64| -> Result<f64> {
        let num = y + alpha;
        let den = n + alpha_0 - num;
        if den <= 0.0 {
            return Err(Error::NumericalDomain {
                word: word.to_string(),
                detail: format!("denominator {den} is not positive"),
            });
        }
        Ok((num / den).ln())
    };
    let (n_i, n_j) = (counts_i.total() as f64, counts_j.total() as f64);
    let mut out = BTreeMap::new();
    for w in words {
        let alpha = (config.background.get(w) as f64).max(1.0);
        let a = log_odds(w, counts_i.get(w) as f64, n_i, alpha)?;
        let b = log_odds(w, counts_j.get(w) as f64, n_j, alpha)?;
        out.insert(w.to_string(), a - b);
    }
    Ok(out)
}

/// Per-style word lists: `words[0]` leans to s1 (positive δ), `words[1]` to s2.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleLexicon {
    pub words: [BTreeSet<String>; 2],
    pub deltas: BTreeMap<String, f64>,
}

impl StyleLexicon {
    pub fn side(&self, word: &str) -> Option<Style> {
        Style::BOTH.into_iter().find(|s| self.words[s.index()].contains(word))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.side(word).is_some()
    }

    pub fn k(&self) -> usize {
        self.words[0].len()
    }
}

/// Top-`k` words by δ for each side, ties broken lexicographically. Zero-δ
/// words are only eligible when there are fewer than `2k` nonzero scores.
pub fn build_style_lexicon(deltas: &BTreeMap<String, f64>, k: usize) -> Result<StyleLexicon> {
    if k == 0 || deltas.len() < 2 * k {
        return Err(Error::InvalidArgument(format!(
            "need at least {} scored words for k = {k}, have {}",
            2 * k,
            deltas.len()
        )));
    }
    let nonzero = deltas.values().filter(|&&d| d != 0.0).count();
    let mut pool: Vec<(&String, f64)> = deltas
        .iter()
        .filter(|(_, &d)| nonzero < 2 * k || d != 0.0)
        .map(|(w, &d)| (w, d))
        .collect();
    pool.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let s1: BTreeSet<String> = pool[..k].iter().map(|(w, _)| (*w).clone()).collect();
    // L2 comes from what L1 left over, so ties can never land on both sides.
    let mut rest = pool.split_off(k);
    rest.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let s2: BTreeSet<String> = rest[..k].iter().map(|(w, _)| (*w).clone()).collect();
    Ok(StyleLexicon {
        words: [s1, s2],
        deltas: deltas.clone(),
    })
}

/// Counts per style over a corpus, δ against the union background, then top-k.
pub fn lexicon_from_corpus(corpus: &StyledCorpus, k: usize) -> Result<StyleLexicon> {
    let c1 = CountTable::from_sentences(corpus.of_style(Style::S1));
    let c2 = CountTable::from_sentences(corpus.of_style(Style::S2));
    let config = LogOddsConfig::union_background(&c1, &c2);
    build_style_lexicon(&log_odds_delta(&c1, &c2, &config)?, k)
}

/// `(in L1, in L2)` as 0/1 values.
pub fn indicator_features(token: &str, lexicon: &StyleLexicon) -> [f64; 2] {
    match lexicon.side(token) {
        Some(Style::S1) => [1.0, 0.0],
        Some(Style::S2) => [0.0, 1.0],
        None => [0.0, 0.0],
    }
}

/// `[V, 2]` indicator rows for every vocabulary entry; multiplying a
/// distribution over the vocabulary by it gives the expected indicators.
pub fn indicator_matrix(vocab: &Vocabulary, lexicon: &StyleLexicon) -> Tensor {
    let data = vocab.tokens().iter().flat_map(|t| indicator_features(t, lexicon)).collect();
    Tensor::matrix(vocab.len(), 2, data).expect("finite indicator values")
}

/// Expected indicators `Σ_w p(w)·ind(w)` of a soft token.
pub fn soft_indicator_features(probs: &[f64], vocab: &Vocabulary, lexicon: &StyleLexicon) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (p, t) in probs.iter().zip(vocab.tokens()) {
        let ind = indicator_features(t, lexicon);
        out[0] += p * ind[0];
        out[1] += p * ind[1];
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexiconRecord {
    pub word: String,
    pub delta: f64,
    pub side: String,
}

/// Writes lexicon words sorted by `|δ|` descending (ties by word).
pub fn write_lexicon(path: &Path, lexicon: &StyleLexicon) -> Result<()> {
    let mut records: Vec<LexiconRecord> = Style::BOTH
        .into_iter()
        .flat_map(|s| {
            lexicon.words[s.index()].iter().map(move |w| LexiconRecord {
                word: w.clone(),
                delta: lexicon.deltas[w],
                side: if s == Style::S1 { "s1" } else { "s2" }.to_string(),
            })
        })
        .collect();
    records.sort_by(|a, b| b.delta.abs().total_cmp(&a.delta.abs()).then_with(|| a.word.cmp(&b.word)));
    write_jsonl(path, records)
}

pub fn read_lexicon(path: &Path) -> Result<StyleLexicon> {
    let records: Vec<LexiconRecord> = read_jsonl(path)?;
    let mut lex = StyleLexicon {
        words: [BTreeSet::new(), BTreeSet::new()],
        deltas: BTreeMap::new(),
    };
    for r in records {
        let side = match r.side.as_str() {
            "s1" => 0,
            "s2" => 1,
            other => return Err(Error::InvalidArgument(format!("lexicon side `{other}`"))),
        };
        lex.words[side].insert(r.word.clone());
        lex.deltas.insert(r.word, r.delta);
    }
    if !lex.words[0].is_disjoint(&lex.words[1]) {
        return Err(Error::InvalidArgument("lexicon sides overlap".into()));
    }
    Ok(lex)
}
