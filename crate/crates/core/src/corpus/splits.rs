use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{detokenize, Style, StyledCorpus};
use crate::error::{Error, Result};

/// Ratios for the class/train/dev/test partition and the shuffle seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub class: f64,
    pub train: f64,
    pub dev: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    fn ratios(&self) -> [f64; 4] {
        [self.class, self.train, self.dev, self.test]
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.ratios();
        if r.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidArgument(format!("split ratios must be positive, got {r:?}")));
        }
        let total: f64 = r.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("split ratios sum to {total}, not 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub class: StyledCorpus,
    pub train: StyledCorpus,
    pub dev: StyledCorpus,
    pub test: StyledCorpus,
}

/// Everything needed to regenerate a split exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub source: String,
    pub source_hash: String,
    pub spec: SplitSpec,
    pub outputs: std::collections::BTreeMap<String, String>,
}

/// Seeded Fisher–Yates: for `i` from the end down to 1, swap `i` with a
/// uniform draw from `0..=i`.
pub(crate) fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i as u64) as usize;
        items.swap(i, j);
    }
}

/// Largest-remainder allocation of `n` items over `ratios`.
fn allocate(n: usize, ratios: &[f64; 4]) -> [usize; 4] {
    let raw: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 4];
    for (c, r) in counts.iter_mut().zip(&raw) {
        *c = r.floor() as usize;
    }
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut remaining = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    counts
}

/// Stratified class/train/dev/test split.
///
/// Each style's indices are shuffled independently (style s1 first, one
/// shared seeded generator) and cut by the ratios. Afterwards any sentence
/// string present in a higher-priority split (dev, then test, then train) is
/// removed from the lower-priority ones, so the four splits are disjoint as
/// string sets.
pub fn make_splits(corpus: &StyledCorpus, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts: [Vec<usize>; 4] = Default::default();
    for style in Style::BOTH {
        let mut idx: Vec<usize> = (0..corpus.len()).filter(|&i| corpus.labels[i] == style).collect();
        shuffle(&mut idx, &mut rng);
        let counts = allocate(idx.len(), &spec.ratios());
        let mut start = 0;
        for (part, c) in parts.iter_mut().zip(counts) {
            part.extend_from_slice(&idx[start..start + c]);
            start += c;
        }
    }

    // Priority order: dev, test, train, class.
    let mut seen: HashSet<String> = HashSet::new();
    for p in [2, 3, 1, 0] {
        let keys: Vec<String> = parts[p].iter().map(|&i| detokenize(&corpus.sentences[i])).collect();
        let kept: Vec<usize> = parts[p]
            .iter()
            .zip(&keys)
            .filter(|(_, k)| !seen.contains(*k))
            .map(|(&i, _)| i)
            .collect();
        seen.extend(keys);
        parts[p] = kept;
    }

    let [class, train, dev, test] = parts.map(|p| corpus.subset(&p));
    Ok(Splits { class, train, dev, test })
}
