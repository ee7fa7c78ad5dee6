use std::collections::{BTreeMap, BTreeSet};

use bst_core::corpus::{gen_synthetic, Style, SyntheticSpec};
use bst_core::lexicon::{
    build_style_lexicon, indicator_features, lexicon_from_corpus, log_odds_delta, CountTable, LogOddsConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight evaluation of the δ formula from raw maps.
fn brute_delta(
    i: &BTreeMap<String, u64>,
    j: &BTreeMap<String, u64>,
    bg: &BTreeMap<String, u64>,
) -> BTreeMap<String, f64> {
    let n_i: u64 = i.values().sum();
    let n_j: u64 = j.values().sum();
    let a0: u64 = bg.values().sum();
    let words: BTreeSet<&String> = i.keys().chain(j.keys()).collect();
    words
        .into_iter()
        .map(|w| {
            let a = (*bg.get(w).unwrap_or(&0)).max(1) as f64;
            let yi = *i.get(w).unwrap_or(&0) as f64;
            let yj = *j.get(w).unwrap_or(&0) as f64;
            let li = ((yi + a) / (n_i as f64 + a0 as f64 - yi - a)).ln();
            let lj = ((yj + a) / (n_j as f64 + a0 as f64 - yj - a)).ln();
            (w.clone(), li - lj)
        })
        .collect()
}

fn random_counts(rng: &mut ChaCha8Rng, vocab: usize) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for w in 0..vocab {
        if rng.gen_bool(0.8) {
            out.insert(format!("w{w}"), rng.gen_range(1..20));
        }
    }
    out
}

fn table(m: &BTreeMap<String, u64>) -> CountTable {
    m.iter().map(|(w, c)| (w.clone(), *c)).collect()
}

#[test]
fn delta_matches_brute_force_on_random_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let vocab = rng.gen_range(2..12);
        let i = random_counts(&mut rng, vocab);
        let j = random_counts(&mut rng, vocab);
        let (ti, tj) = (table(&i), table(&j));
        let cfg = LogOddsConfig::union_background(&ti, &tj);
        let mut bg = i.clone();
        for (w, c) in &j {
            *bg.entry(w.clone()).or_insert(0) += c;
        }
        let got = log_odds_delta(&ti, &tj, &cfg).unwrap();
        let want = brute_delta(&i, &j, &bg);
        assert_eq!(got.len(), want.len());
        for (w, v) in &want {
            worst = worst.max((got[w] - v).abs());
        }
        let swapped = log_odds_delta(&tj, &ti, &cfg).unwrap();
        for (w, v) in &got {
            assert_eq!(*v, -swapped[w], "antisymmetry broken for {w}");
        }
    }
    assert!(worst <= 1e-12, "max deviation {worst}");
}

#[test]
fn markers_fill_the_lexicon() {
    let mut spec = SyntheticSpec::with_sizes(60, 6, 20);
    spec.parallel_pairs = 10;
    spec.styled_per_style = 400;
    let (_, styled, _) = gen_synthetic(&spec, 5).unwrap();
    let lex = lexicon_from_corpus(&styled, spec.markers[0].len()).unwrap();
    for s in Style::BOTH {
        let markers: BTreeSet<String> = spec.markers[s.index()].iter().cloned().collect();
        assert!(lex.words[s.index()].is_superset(&markers), "{s:?}: {:?}", lex.words[s.index()]);
    }
    assert_eq!(indicator_features(&spec.markers[0][0], &lex), [1.0, 0.0]);
    assert_eq!(indicator_features(&spec.markers[1][0], &lex), [0.0, 1.0]);
}

fn counts_strategy() -> impl Strategy<Value = BTreeMap<String, u64>> {
    prop::collection::btree_map("[a-f]", 1u64..30, 1..6)
}

proptest! {
    #[test]
    fn increasing_a_count_raises_its_delta(i in counts_strategy(), j in counts_strategy(), bump in 1u64..10) {
        let (ti, tj) = (table(&i), table(&j));
        // Fixed background so only y_w changes.
        let mut bg = i.clone();
        for (w, c) in &j { *bg.entry(w.clone()).or_insert(0) += c + 10; }
        let cfg = LogOddsConfig { background: table(&bg) };
        let before = log_odds_delta(&ti, &tj, &cfg);
        prop_assume!(before.is_ok());
        let before = before.unwrap();
        let w = i.keys().next().unwrap().clone();
        let mut i2 = i.clone();
        *i2.get_mut(&w).unwrap() += bump;
        if let Ok(after) = log_odds_delta(&table(&i2), &tj, &cfg) {
            prop_assert!(after[&w] > before[&w]);
        }
    }

    #[test]
    fn lexicon_sides_are_disjoint(scores in prop::collection::btree_map("[a-z]{1,3}", -3i32..4, 2..30), k in 1usize..5) {
        let deltas: BTreeMap<String, f64> = scores.into_iter().map(|(w, d)| (w, d as f64 / 2.0)).collect();
        match build_style_lexicon(&deltas, k) {
            Ok(lex) => {
                prop_assert!(lex.words[0].is_disjoint(&lex.words[1]));
                prop_assert_eq!(lex.words[0].len(), k);
                prop_assert_eq!(lex.words[1].len(), k);
                let nonzero = deltas.values().filter(|d| **d != 0.0).count();
                if nonzero >= 2 * k {
                    prop_assert!(lex.words.iter().flatten().all(|w| deltas[w] != 0.0));
                }
            }
            Err(_) => prop_assert!(deltas.len() < 2 * k),
        }
    }
}
