//! Corpus ingestion, tokenization, vocabularies, splits and the synthetic
//! pivot-language generator.

pub(crate) mod io;
pub(crate) mod splits;
mod synthetic;
mod tokenize;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) use io::{read_jsonl, write_jsonl};
pub use io::{
    read_parallel_jsonl, read_styled_jsonl, write_parallel_jsonl, write_styled_jsonl, ParallelRecord, StyledRecord,
};
pub use splits::{make_splits, SplitManifest, SplitSpec, Splits};
pub use synthetic::{gen_synthetic, Pivot, SyntheticSpec};
pub use tokenize::{detokenize, tokenize};
pub use vocab::{build_vocab, Vocabulary, BOS, EOS, PAD, RESERVED, UNK, UNK_TOKEN};

/// Sentences are truncated to this many tokens on ingestion.
pub const MAX_SENTENCE_LEN: usize = 50;

pub type Sentence = Vec<String>;

/// One of the two styles of a transfer task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Style {
    S1,
    S2,
}

impl Style {
    pub const BOTH: [Style; 2] = [Style::S1, Style::S2];

    pub fn index(self) -> usize {
        match self {
            Style::S1 => 0,
            Style::S2 => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Style::S1),
            1 => Some(Style::S2),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Style::S1 => Style::S2,
            Style::S2 => Style::S1,
        }
    }
}

/// Labeled sentences of two styles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyledCorpus {
    pub sentences: Vec<Sentence>,
    pub labels: Vec<Style>,
    pub style_names: [String; 2],
}

impl StyledCorpus {
    pub fn new(style_names: [String; 2]) -> Self {
        Self {
            sentences: Vec::new(),
            labels: Vec::new(),
            style_names,
        }
    }

    /// Appends a sentence, truncating it to [`MAX_SENTENCE_LEN`] tokens.
    pub fn push(&mut self, mut sentence: Sentence, style: Style) -> Result<()> {
        if sentence.is_empty() {
            return Err(Error::EmptySentence);
        }
        sentence.truncate(MAX_SENTENCE_LEN);
        self.sentences.push(sentence);
        self.labels.push(style);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn style_name(&self, style: Style) -> &str {
        &self.style_names[style.index()]
    }

    pub fn style_by_name(&self, name: &str) -> Option<Style> {
        Style::BOTH.into_iter().find(|s| self.style_name(*s) == name)
    }

    /// Sentences carrying `style`.
    pub fn of_style(&self, style: Style) -> impl Iterator<Item = &Sentence> + '_ {
        self.sentences
            .iter()
            .zip(&self.labels)
            .filter(move |(_, &l)| l == style)
            .map(|(s, _)| s)
    }

    pub fn count(&self, style: Style) -> usize {
        self.labels.iter().filter(|&&l| l == style).count()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            sentences: indices.iter().map(|&i| self.sentences[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            style_names: self.style_names.clone(),
        }
    }
}

/// Aligned sentence pairs in languages e and f.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub pairs: Vec<(Sentence, Sentence)>,
}

impl ParallelCorpus {
    pub fn push(&mut self, mut src: Sentence, mut tgt: Sentence) -> Result<()> {
        if src.is_empty() || tgt.is_empty() {
            return Err(Error::EmptySentence);
        }
        src.truncate(MAX_SENTENCE_LEN);
        tgt.truncate(MAX_SENTENCE_LEN);
        self.pairs.push((src, tgt));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The same pairs with sides swapped (f→e direction).
    pub fn reversed(&self) -> Self {
        Self {
            pairs: self.pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect(),
        }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            pairs: self.pairs[range].to_vec(),
        }
    }
}
