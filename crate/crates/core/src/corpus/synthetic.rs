use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::splits::shuffle;
use super::{ParallelCorpus, Sentence, Style, StyledCorpus};
use crate::error::{Error, Result};

const CONSONANTS: &str = "bdfgklmnprst";
const VOWELS: &str = "aeiou";

fn syllables() -> Vec<String> {
    CONSONANTS
        .chars()
        .flat_map(|c| VOWELS.chars().map(move |v| format!("{c}{v}")))
        .collect()
}

/// `n` distinct two-syllable words with the given prefix. A stride coprime to
/// the number of syllable pairs scatters them over the space.
fn words(prefix: &str, n: usize, offset: usize) -> Vec<String> {
    let syl = syllables();
    let space = syl.len() * syl.len();
    assert!(n <= space, "at most {space} words per prefix");
    (0..n)
        .map(|i| {
            let p = (7 * i + offset) % space;
            format!("{prefix}{}{}", syl[p / syl.len()], syl[p % syl.len()])
        })
        .collect()
}

/// Parameters of the synthetic corpora.
///
/// Language e draws sentences from `content` (rank-skewed frequencies).
/// Language f is e under a per-token bijection followed, when `reverse` is
/// set, by full word-order reversal. The parallel corpus is style-agnostic:
/// it never contains markers, but `rare_rate` of its sentences carry one
/// token from the large `rare` pool so that out-of-vocabulary handling is
/// exercised. Styled sentences insert 1..=`max_markers` markers from the
/// style's marker set, each right after a content token and chosen by that
/// token's rank, so the marker is predictable from context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub content: Vec<String>,
    pub markers: [Vec<String>; 2],
    pub rare: Vec<String>,
    pub style_names: [String; 2],
    pub parallel_pairs: usize,
    pub styled_per_style: usize,
    pub parallel_len: (usize, usize),
    pub styled_content_len: (usize, usize),
    pub max_markers: usize,
    pub rare_rate: f64,
    pub zipf_exponent: f64,
    pub reverse: bool,
}

impl SyntheticSpec {
    /// Word lists of the requested sizes with default shape parameters.
    pub fn with_sizes(content: usize, markers: usize, rare: usize) -> Self {
        Self {
            content: words("", content, 13),
            markers: [words("v", markers, 5), words("z", markers, 5)],
            rare: words("h", rare, 29),
            style_names: ["s1".into(), "s2".into()],
            parallel_pairs: 5500,
            styled_per_style: 2500,
            parallel_len: (3, 12),
            styled_content_len: (3, 10),
            max_markers: 2,
            rare_rate: 0.2,
            zipf_exponent: 0.5,
            reverse: true,
        }
    }

    pub fn desk() -> Self {
        Self::with_sizes(150, 8, 2000)
    }

    pub fn validate(&self) -> Result<()> {
        let m1: HashSet<&String> = self.markers[0].iter().collect();
        if let Some(w) = self.markers[1].iter().find(|w| m1.contains(w)) {
            return Err(Error::InvalidArgument(format!("marker `{w}` belongs to both styles")));
        }
        if self.content.is_empty() || self.markers.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("content and marker sets must be nonempty".into()));
        }
        let mut seen = HashSet::new();
        for w in self.content.iter().chain(self.markers.iter().flatten()).chain(&self.rare) {
            if !seen.insert(w) {
                return Err(Error::InvalidArgument(format!("word `{w}` appears in more than one set")));
            }
        }
        let (lo, hi) = self.parallel_len;
        let (clo, chi) = self.styled_content_len;
        if lo == 0 || lo > hi || clo == 0 || clo > chi || self.max_markers == 0 || self.max_markers > clo {
            return Err(Error::InvalidArgument("inconsistent sentence length ranges".into()));
        }
        if hi > super::MAX_SENTENCE_LEN || chi + self.max_markers > super::MAX_SENTENCE_LEN {
            return Err(Error::InvalidArgument("synthetic sentences would exceed 50 tokens".into()));
        }
        if !(0.0..=1.0).contains(&self.rare_rate) || (self.rare_rate > 0.0 && self.rare.is_empty()) {
            return Err(Error::InvalidArgument("rare_rate needs a nonempty rare pool and lie in [0,1]".into()));
        }
        Ok(())
    }

    /// Marker of `style` that follows a content token of rank `rank`.
    pub fn marker_for(&self, style: Style, rank: usize) -> &str {
        let set = &self.markers[style.index()];
        &set[rank % set.len()]
    }
}

/// The deterministic e→f transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pivot {
    pub forward: HashMap<String, String>,
    pub reverse_order: bool,
}

impl Pivot {
    fn build(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut e_words: Vec<&String> = spec.content.iter().chain(spec.markers.iter().flatten()).chain(&spec.rare).collect();
        e_words.sort();
        let mut f_words = words("x", e_words.len(), 101);
        shuffle(&mut f_words, rng);
        Self {
            forward: e_words.into_iter().cloned().zip(f_words).collect(),
            reverse_order: spec.reverse,
        }
    }

    /// Maps each token through the bijection (unknown tokens pass through)
    /// and reverses word order when configured.
    pub fn translate(&self, e: &[String]) -> Sentence {
        let mut out: Sentence = e.iter().map(|w| self.forward.get(w).cloned().unwrap_or_else(|| w.clone())).collect();
        if self.reverse_order {
            out.reverse();
        }
        out
    }
}

struct Sampler {
    cumulative: Vec<f64>,
}

impl Sampler {
    fn new(n: usize, exponent: f64) -> Self {
        let mut acc = 0.0;
        let cumulative = (0..n)
            .map(|r| {
                acc += 1.0 / ((r + 1) as f64).powf(exponent);
                acc
            })
            .collect();
        Self { cumulative }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cumulative.last().expect("nonempty");
        let u = rng.gen::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

/// Generates the parallel corpus, the styled corpus and the pivot transform.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(ParallelCorpus, StyledCorpus, Pivot)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pivot = Pivot::build(spec, &mut rng);
    let sampler = Sampler::new(spec.content.len(), spec.zipf_exponent);

    let mut parallel = ParallelCorpus::default();
    for _ in 0..spec.parallel_pairs {
        let len = rng.gen_range(spec.parallel_len.0..=spec.parallel_len.1);
        let mut e: Sentence = (0..len).map(|_| spec.content[sampler.draw(&mut rng)].clone()).collect();
        if rng.gen_bool(spec.rare_rate) {
            let pos = rng.gen_range(0..len);
            e[pos] = spec.rare[rng.gen_range(0..spec.rare.len())].clone();
        }
        let f = pivot.translate(&e);
        parallel.push(e, f)?;
    }

    let mut styled = StyledCorpus::new(spec.style_names.clone());
    for _ in 0..spec.styled_per_style {
        for style in Style::BOTH {
            let len = rng.gen_range(spec.styled_content_len.0..=spec.styled_content_len.1);
            let ranks: Vec<usize> = (0..len).map(|_| sampler.draw(&mut rng)).collect();
            let k = rng.gen_range(1..=spec.max_markers);
            let mut slots: Vec<usize> = (0..len).collect();
            shuffle(&mut slots, &mut rng);
            let marked: HashSet<usize> = slots[..k].iter().copied().collect();
            let mut sentence = Vec::with_capacity(len + k);
            for (j, &rank) in ranks.iter().enumerate() {
                sentence.push(spec.content[rank].clone());
                if marked.contains(&j) {
                    sentence.push(spec.marker_for(style, rank).to_string());
                }
            }
            styled.push(sentence, style)?;
        }
    }
    Ok((parallel, styled, pivot))
}
