//! Automatic transfer accuracy and content retention, the pairwise meaning
//! and fluency annotation protocols, and report rendering.

mod protocol;
mod report;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, Style, Vocabulary};
use crate::error::{Error, Result};
use crate::lexicon::StyleLexicon;
use crate::style::Classifier;

pub use protocol::{
    aggregate_fluency, aggregate_meaning, make_tasks, read_judgments, read_tasks, reference_fluency, reference_meaning,
    write_tasks, AnnotationTask, Bucket, FluencyRow, FluencyTable, Judgment, JudgmentSubmission, MeaningRow,
    MeaningTable, TaskKind, TaskPayload, TaskSpec, Verdict, LONG_MAX, SHORT_MAX,
};
pub use report::{render_fluency, render_meaning, render_transfer};

pub const STOPWORD_COUNT: usize = 50;

/// Accuracy of one transfer direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionAccuracy {
    pub source: String,
    pub target: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub experiment: String,
    pub system: String,
    /// Indexed by source style: `[s1 -> s2, s2 -> s1]`.
    pub directions: Vec<DirectionAccuracy>,
    pub aggregate: f64,
    pub n: usize,
    pub content_retention: Option<f64>,
    /// Accuracies of the full-scale system on real corpora, for side-by-side display.
    pub reference: BTreeMap<String, f64>,
}

/// Full-scale transfer accuracies (percent) per experiment.
pub fn reference_accuracies() -> BTreeMap<String, f64> {
    [("gender", 57.04), ("political", 88.01), ("sentiment", 87.22)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

/// Generated sentences with the style each was meant to have.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferOutputs {
    pub style_names: [String; 2],
    pub sentences: Vec<Sentence>,
    pub targets: Vec<Style>,
}

/// Fraction of outputs that `classifier` assigns to their target style, per
/// direction and pooled. An empty output counts as a miss. `output_vocab` is
/// the vocabulary the outputs were generated with.
pub fn transfer_accuracy(
    outputs: &TransferOutputs,
    output_vocab: &Vocabulary,
    classifier: &Classifier,
    experiment: &str,
) -> Result<TransferReport> {
    if output_vocab.hash() != classifier.vocab().hash() {
        return Err(Error::VocabularyMismatch(format!(
            "outputs use vocabulary {} but the classifier was trained on {}",
            output_vocab.hash(),
            classifier.vocab().hash()
        )));
    }
    if outputs.sentences.is_empty() || outputs.sentences.len() != outputs.targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} outputs for {} targets",
            outputs.sentences.len(),
            outputs.targets.len()
        )));
    }
    let nonempty: Vec<usize> = (0..outputs.sentences.len()).filter(|&i| !outputs.sentences[i].is_empty()).collect();
    let sentences: Vec<Sentence> = nonempty.iter().map(|&i| outputs.sentences[i].clone()).collect();
    let mut predicted: Vec<Option<Style>> = vec![None; outputs.sentences.len()];
    for (&i, p) in nonempty.iter().zip(classifier.predict(&sentences)?) {
        predicted[i] = Some(p);
    }
    let directions: Vec<DirectionAccuracy> = Style::BOTH
        .iter()
        .map(|&source| {
            let target = source.other();
            let hits: Vec<bool> = outputs
                .targets
                .iter()
                .zip(&predicted)
                .filter(|(&t, _)| t == target)
                .map(|(&t, &p)| p == Some(t))
                .collect();
            let correct = hits.iter().filter(|&&h| h).count();
            DirectionAccuracy {
                source: outputs.style_names[source.index()].clone(),
                target: outputs.style_names[target.index()].clone(),
                n: hits.len(),
                correct,
                accuracy: if hits.is_empty() { 0.0 } else { correct as f64 / hits.len() as f64 },
            }
        })
        .collect();
    let correct: usize = directions.iter().map(|d| d.correct).sum();
    Ok(TransferReport {
        experiment: experiment.to_string(),
        system: "BST".into(),
        directions,
        aggregate: correct as f64 / outputs.sentences.len() as f64,
        n: outputs.sentences.len(),
        content_retention: None,
        reference: reference_accuracies(),
    })
}

/// The `n` most frequent tokens, ties broken alphabetically.
pub fn stopwords<'a>(sentences: impl IntoIterator<Item = &'a Sentence>, n: usize) -> HashSet<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in sentences.into_iter().flatten() {
        *counts.entry(w).or_insert(0) += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.into_iter().take(n).map(|(w, _)| w.to_string()).collect()
}

fn content<'a>(x: &'a [String], lexicon: &StyleLexicon, stop: &HashSet<String>) -> HashSet<&'a str> {
    x.iter()
        .filter(|w| !lexicon.contains(w) && !stop.contains(*w))
        .map(String::as_str)
        .collect()
}

/// `|content(source) ∩ content(generated)| / |content(source)|`, where content
/// drops lexicon words and stopwords. A source with no content words scores 1;
/// an empty output keeps nothing.
pub fn content_retention(
    source: &[String],
    generated: &[String],
    lexicon: &StyleLexicon,
    stopwords: &HashSet<String>,
) -> Result<f64> {
    if source.is_empty() {
        return Err(Error::EmptySentence);
    }
    let src = content(source, lexicon, stopwords);
    if src.is_empty() {
        return Ok(1.0);
    }
    let gen = content(generated, lexicon, stopwords);
    Ok(src.intersection(&gen).count() as f64 / src.len() as f64)
}

/// Mean of [`content_retention`] over aligned pairs.
pub fn mean_content_retention(
    sources: &[Sentence],
    generated: &[Sentence],
    lexicon: &StyleLexicon,
    stopwords: &HashSet<String>,
) -> Result<f64> {
    if sources.len() != generated.len() || sources.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} sources for {} outputs",
            sources.len(),
            generated.len()
        )));
    }
    let mut total = 0.0;
    for (s, g) in sources.iter().zip(generated) {
        total += content_retention(s, g, lexicon, stopwords)?;
    }
    Ok(total / sources.len() as f64)
}
