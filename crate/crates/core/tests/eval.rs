use std::collections::{HashMap, HashSet};

use bst_core::corpus::{Sentence, Style, Vocabulary, RESERVED};
use bst_core::eval::{
    aggregate_fluency, aggregate_meaning, content_retention, make_tasks, mean_content_retention, reference_accuracies,
    reference_fluency, reference_meaning, render_fluency, render_meaning, stopwords, transfer_accuracy, AnnotationTask,
    Bucket, Judgment, TaskKind, TaskSpec, TransferOutputs, Verdict,
};
use bst_core::lexicon::StyleLexicon;
use bst_core::style::{Classifier, ClassifierConfig};
use bst_core::Error;
use bst_kernel::{checkpoint, Tensor};
use proptest::prelude::*;

fn vocab(words: &[&str]) -> Vocabulary {
    let tokens = RESERVED.iter().chain(words).map(|s| s.to_string()).collect();
    Vocabulary::from_tokens(tokens).unwrap()
}

fn lexicon(s1: &[&str], s2: &[&str]) -> StyleLexicon {
    StyleLexicon {
        words: [
            s1.iter().map(|s| s.to_string()).collect(),
            s2.iter().map(|s| s.to_string()).collect(),
        ],
        deltas: Default::default(),
    }
}

fn toks(s: &str) -> Sentence {
    s.split_whitespace().map(String::from).collect()
}

fn names() -> [String; 2] {
    ["male".to_string(), "female".to_string()]
}

/// A classifier whose two filters fire on the `m1` and `m2` indicators.
/// Sentences with only `m2` go to s2; everything else ties or goes to s1.
fn marker_classifier() -> Classifier {
    let config = ClassifierConfig {
        embedding: 2,
        filters: 2,
        width: 1,
        ..ClassifierConfig::desk()
    };
    let c = Classifier::new(vocab(&["a", "b", "c", "m1", "m2"]), &lexicon(&["m1"], &["m2"]), config).unwrap();
    let (mut store, meta) = checkpoint::decode(&c.to_bytes().unwrap()).unwrap();
    let set = |store: &mut bst_kernel::ParamStore, name: &str, rows: usize, cols: usize, data: Vec<f64>| {
        let id = store.id(name).unwrap();
        store.set(id, Tensor::matrix(rows, cols, data).unwrap()).unwrap();
    };
    let v = c.vocab().len();
    set(&mut store, "cls.emb", v, 2, vec![0.0; 2 * v]);
    set(&mut store, "cls.conv.w", 2, 4, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    set(&mut store, "cls.out.w", 2, 2, vec![5.0, -5.0, -5.0, 5.0]);
    Classifier::from_bytes(&checkpoint::encode(&store, &meta).unwrap()).unwrap()
}

#[test]
fn hand_labeled_outputs_match_manual_count() {
    let c = marker_classifier();
    // (output, target, predicted by the marker rule)
    let cases = [
        ("a m2 b", Style::S2),    // s2, hit
        ("m2", Style::S2),        // s2, hit
        ("a b c", Style::S2),     // s1, miss
        ("m1 m2", Style::S2),     // tie goes to s1, miss
        ("c m1", Style::S2),      // s1, miss
        ("a m1", Style::S1),      // s1, hit
        ("m1 b m1", Style::S1),   // s1, hit
        ("b m2", Style::S1),      // s2, miss
        ("c", Style::S1),         // s1, hit
        ("m2 m2 a", Style::S1),   // s2, miss
    ];
    let outputs = TransferOutputs {
        style_names: names(),
        sentences: cases.iter().map(|(s, _)| toks(s)).collect(),
        targets: cases.iter().map(|(_, t)| *t).collect(),
    };
    let report = transfer_accuracy(&outputs, c.vocab(), &c, "gender").unwrap();
    assert_eq!(report.n, 10);
    assert_eq!(report.aggregate, 0.5);
    // Directions are reported by source style: s1 -> s2 first.
    assert_eq!(report.directions[0].source, "male");
    assert_eq!((report.directions[0].n, report.directions[0].correct), (5, 2));
    assert_eq!((report.directions[1].n, report.directions[1].correct), (5, 3));
    assert_eq!(report.directions[1].accuracy, 0.6);
}

#[test]
fn empty_output_counts_as_a_miss() {
    let c = marker_classifier();
    let outputs = TransferOutputs {
        style_names: names(),
        sentences: vec![toks("m2"), Vec::new()],
        targets: vec![Style::S2, Style::S2],
    };
    let report = transfer_accuracy(&outputs, c.vocab(), &c, "x").unwrap();
    assert_eq!(report.aggregate, 0.5);
}

#[test]
fn reproduced_labels_score_exactly_one() {
    let c = marker_classifier();
    let sentences: Vec<Sentence> = ["m2 a", "a m1", "m2", "b c", "c m2 m2", "m1"].iter().map(|s| toks(s)).collect();
    let targets = c.predict(&sentences).unwrap();
    assert!(targets.contains(&Style::S1) && targets.contains(&Style::S2));
    let outputs = TransferOutputs {
        style_names: names(),
        sentences,
        targets,
    };
    assert_eq!(transfer_accuracy(&outputs, c.vocab(), &c, "x").unwrap().aggregate, 1.0);
}

#[test]
fn vocabulary_mismatch_is_rejected() {
    let c = marker_classifier();
    let outputs = TransferOutputs {
        style_names: names(),
        sentences: vec![toks("a")],
        targets: vec![Style::S1],
    };
    let other = vocab(&["a", "b", "c", "m1", "zz"]);
    let err = transfer_accuracy(&outputs, &other, &c, "x").unwrap_err();
    assert!(matches!(err, Error::VocabularyMismatch(_)));
}

#[test]
fn transfer_reference_values() {
    let r = reference_accuracies();
    assert_eq!(r["political"], 88.01);
    assert_eq!(r["sentiment"], 87.22);
    assert_eq!(r["gender"], 57.04);
}

#[test]
fn retention_examples() {
    let lex = lexicon(&["he"], &["she"]);
    let stop: HashSet<String> = ["the", "a"].iter().map(|s| s.to_string()).collect();
    let src = toks("he ate the soup with bread and salt");
    assert_eq!(content_retention(&src, &src, &lex, &stop).unwrap(), 1.0);
    assert_eq!(content_retention(&src, &toks("she drank a tea"), &lex, &stop).unwrap(), 0.0);
    // Content of the source: {ate, soup, bread, salt}; three survive.
    let gen = toks("she ate the soup and salt bread");
    let src = toks("he ate the soup and salt cake");
    let lex = lexicon(&["he", "and"], &["she"]);
    assert_eq!(content_retention(&src, &gen, &lex, &stop).unwrap(), 0.75);
    assert_eq!(content_retention(&src, &[], &lex, &stop).unwrap(), 0.0);
    assert!(content_retention(&[], &src, &lex, &stop).is_err());
    let mean = mean_content_retention(&[src.clone(), src.clone()], &[gen, src], &lex, &stop).unwrap();
    assert_eq!(mean, 0.875);
}

#[test]
fn stopwords_are_most_frequent_tokens() {
    let corpus = vec![toks("the cat the dog"), toks("a cat the end")];
    let s = stopwords(&corpus, 2);
    assert_eq!(s, ["the", "cat"].iter().map(|s| s.to_string()).collect());
}

proptest! {
    #[test]
    fn retention_is_a_rate(
        src in prop::collection::vec(0usize..12, 1..10),
        gen in prop::collection::vec(0usize..12, 0..10),
    ) {
        let w = |i: &usize| format!("w{i}");
        let src: Sentence = src.iter().map(w).collect();
        let gen: Sentence = gen.iter().map(w).collect();
        let r = content_retention(&src, &gen, &lexicon(&["w0"], &["w1"]), &HashSet::new()).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert_eq!(content_retention(&src, &src, &lexicon(&[], &[]), &HashSet::new()).unwrap(), 1.0);
    }
}

fn sentence_of_len(n: usize, k: usize) -> Sentence {
    (0..n).map(|i| format!("t{k}x{i}")).collect()
}

fn spec(kind: TaskKind, seed: u64) -> TaskSpec {
    TaskSpec::new("gender", kind, ["CAE", "BST"], seed)
}

#[test]
fn tasks_are_deterministic_per_seed() {
    let src: Vec<Sentence> = (0..30).map(|k| sentence_of_len(1 + k % 20, k)).collect();
    let a: Vec<Sentence> = src.iter().map(|s| s.iter().map(|w| format!("{w}a")).collect()).collect();
    let b: Vec<Sentence> = src.iter().map(|s| s.iter().map(|w| format!("{w}b")).collect()).collect();
    for kind in [TaskKind::MeaningAb, TaskKind::Fluency] {
        let x = make_tasks(&src, &a, &b, &spec(kind, 11)).unwrap();
        let y = make_tasks(&src, &a, &b, &spec(kind, 11)).unwrap();
        assert_eq!(x, y);
        let z = make_tasks(&src, &a, &b, &spec(kind, 12)).unwrap();
        assert_ne!(x, z);
    }
}

#[test]
fn buckets_respect_their_bounds() {
    let src: Vec<Sentence> = (0..40).map(|k| sentence_of_len(1 + k * 29 / 39, k)).collect();
    let tasks = make_tasks(&src, &src, &src, &spec(TaskKind::MeaningAb, 3)).unwrap();
    assert_eq!(tasks.len(), 40);
    let mut seen = HashMap::new();
    for t in &tasks {
        let n = t.source.split_whitespace().count();
        match t.bucket {
            Bucket::Short => assert!((1..=15).contains(&n), "{n} tokens in the short bucket"),
            Bucket::Long => assert!((16..=30).contains(&n), "{n} tokens in the long bucket"),
        }
        *seen.entry(t.bucket).or_insert(0) += 1;
    }
    assert_eq!(seen.len(), 2);
}

#[test]
fn presentation_order_is_balanced() {
    let src: Vec<Sentence> = (0..1000).map(|k| sentence_of_len(3, k)).collect();
    let tasks = make_tasks(&src, &src, &src, &spec(TaskKind::MeaningAb, 2024)).unwrap();
    assert_eq!(tasks.len(), 1000);
    let first = tasks.iter().filter(|t| t.shown == [0, 1]).count() as f64 / 1000.0;
    assert!((0.45..=0.55).contains(&first), "first system shown first in {first}");
    assert!(tasks.iter().all(|t| t.shown == [0, 1] || t.shown == [1, 0]));
}

#[test]
fn misaligned_inputs_are_rejected() {
    let src = vec![toks("a b"), toks("c d")];
    let short = vec![toks("x")];
    for kind in [TaskKind::MeaningAb, TaskKind::Fluency] {
        assert!(make_tasks(&src, &short, &src, &spec(kind, 1)).is_err());
        assert!(make_tasks(&src, &src, &short, &spec(kind, 1)).is_err());
    }
}

#[test]
fn payload_carries_no_system_identity() {
    let src: Vec<Sentence> = (0..20).map(|k| sentence_of_len(2 + k, k)).collect();
    let a: Vec<Sentence> = src.iter().map(|s| toks(&format!("{} alpha", s.join(" ")))).collect();
    let b: Vec<Sentence> = src.iter().map(|s| toks(&format!("{} beta", s.join(" ")))).collect();
    for kind in [TaskKind::MeaningAb, TaskKind::Fluency] {
        for t in make_tasks(&src, &a, &b, &spec(kind, 5)).unwrap() {
            let v = serde_json::to_value(t.payload()).unwrap();
            let keys: HashSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
            let allowed: HashSet<&str> = ["id", "kind", "prompt", "source", "candidates", "verdicts"].into();
            assert_eq!(keys, allowed);
            let text = v.to_string();
            for leak in ["CAE", "BST", "shown", "systems", "seed", "bucket"] {
                assert!(!text.contains(leak), "payload mentions {leak}: {text}");
            }
        }
    }
}

fn judgment(task: &AnnotationTask, annotator: &str, verdict: Verdict) -> Judgment {
    Judgment {
        task_id: task.id.clone(),
        annotator: annotator.to_string(),
        verdict,
        timestamp: 0,
    }
}

/// Meaning tasks with a fixed presentation order: even tasks show the first
/// system as A, odd tasks show it as B. Tasks 0..3 are short, 3..5 long.
fn meaning_fixture() -> Vec<AnnotationTask> {
    let src: Vec<Sentence> = [3, 5, 8, 20, 25].iter().enumerate().map(|(k, &n)| sentence_of_len(n, k)).collect();
    let mut tasks = make_tasks(&src, &src, &src, &spec(TaskKind::MeaningAb, 9)).unwrap();
    for (k, t) in tasks.iter_mut().enumerate() {
        t.shown = if k % 2 == 0 { vec![0, 1] } else { vec![1, 0] };
    }
    tasks
}

#[test]
fn all_no_preference_is_all_middle() {
    let tasks = meaning_fixture();
    let js: Vec<Judgment> = tasks.iter().map(|t| judgment(t, "u", Verdict::NoPreference)).collect();
    let table = aggregate_meaning(&tasks, &js, false).unwrap();
    assert_eq!(table.rows[0].percent, [0.0, 100.0, 0.0]);
}

#[test]
fn ten_judgments_unblind_to_manual_percentages() {
    let t = meaning_fixture();
    // Column for each verdict, worked out from the presentation order:
    // task 0 [CAE,BST], 1 [BST,CAE], 2 [CAE,BST], 3 [BST,CAE], 4 [CAE,BST].
    let js = vec![
        judgment(&t[0], "u1", Verdict::A),            // CAE, short
        judgment(&t[0], "u2", Verdict::B),            // BST, short
        judgment(&t[1], "u1", Verdict::A),            // BST, short
        judgment(&t[1], "u2", Verdict::NoPreference), // none, short
        judgment(&t[2], "u1", Verdict::B),            // BST, short
        judgment(&t[2], "u2", Verdict::B),            // BST, short
        judgment(&t[3], "u1", Verdict::B),            // CAE, long
        judgment(&t[3], "u2", Verdict::A),            // BST, long
        judgment(&t[4], "u1", Verdict::NoPreference), // none, long
        judgment(&t[4], "u2", Verdict::B),            // BST, long
    ];
    let table = aggregate_meaning(&t, &js, true).unwrap();
    assert_eq!(table.systems, ["CAE".to_string(), "BST".to_string()]);
    assert_eq!(table.rows.len(), 3);
    assert_eq!(table.rows[0].counts, [2, 2, 6]);
    assert_eq!(table.rows[0].percent, [20.0, 20.0, 60.0]);
    assert_eq!(table.rows[1].bucket, Some(Bucket::Short));
    assert_eq!(table.rows[1].counts, [1, 1, 4]);
    assert_eq!(table.rows[2].counts, [1, 1, 2]);
    assert_eq!(table.rows[2].percent, [25.0, 25.0, 50.0]);
    let text = render_meaning(&table);
    assert_eq!(
        text,
        "Experiment   |   CAE | No Pref. |   BST\n\
         -------------+-------+----------+------\n\
         gender       | 20.00 |    20.00 | 60.00\n\
         gender Short | 16.67 |    16.67 | 66.67\n\
         gender Long  | 25.00 |    25.00 | 50.00\n"
    );
}

#[test]
fn unknown_task_fails_aggregation() {
    let tasks = meaning_fixture();
    let mut j = judgment(&tasks[0], "u", Verdict::A);
    j.task_id = "gender-m9999".into();
    assert!(matches!(aggregate_meaning(&tasks, &[j], false), Err(Error::UnknownTask(_))));
}

proptest! {
    #[test]
    fn meaning_percentages_sum_to_one_hundred(verdicts in prop::collection::vec((0usize..5, 0u8..3), 1..60)) {
        let tasks = meaning_fixture();
        let js: Vec<Judgment> = verdicts
            .iter()
            .enumerate()
            .map(|(k, &(t, v))| {
                let v = [Verdict::A, Verdict::B, Verdict::NoPreference][v as usize].clone();
                judgment(&tasks[t], &format!("u{k}"), v)
            })
            .collect();
        let table = aggregate_meaning(&tasks, &js, true).unwrap();
        for row in table.rows.iter().filter(|r| r.n > 0) {
            prop_assert!((row.percent.iter().sum::<f64>() - 100.0).abs() <= 0.01);
        }
        prop_assert_eq!(table.rows[0].n, verdicts.len());
    }
}

fn fluency_fixture() -> Vec<AnnotationTask> {
    let src: Vec<Sentence> = [4, 18].iter().enumerate().map(|(k, &n)| sentence_of_len(n, k)).collect();
    make_tasks(&src, &src, &src, &spec(TaskKind::Fluency, 4)).unwrap()
}

fn find(tasks: &[AnnotationTask], system: usize, bucket: Bucket) -> &AnnotationTask {
    tasks.iter().find(|t| t.shown[0] == system && t.bucket == bucket).unwrap()
}

#[test]
fn all_fours_average_four() {
    let tasks = fluency_fixture();
    let js: Vec<Judgment> = tasks.iter().map(|t| judgment(t, "u", Verdict::Rating(4))).collect();
    let table = aggregate_fluency(&tasks, &js).unwrap();
    for row in &table.rows {
        assert_eq!(row.mean, [Some(4.0), Some(4.0)], "{}", row.label);
    }
}

#[test]
fn fluency_means_match_manual_arithmetic() {
    let t = fluency_fixture();
    assert_eq!(t.len(), 4);
    let (cae_s, cae_l) = (find(&t, 0, Bucket::Short), find(&t, 0, Bucket::Long));
    let (bst_s, bst_l) = (find(&t, 1, Bucket::Short), find(&t, 1, Bucket::Long));
    let mut js = Vec::new();
    for (k, r) in [3, 4, 2, 3].into_iter().enumerate() {
        js.push(judgment(bst_s, &format!("u{k}"), Verdict::Rating(r)));
    }
    js.push(judgment(bst_l, "u0", Verdict::Rating(1)));
    js.push(judgment(cae_s, "u0", Verdict::Rating(2)));
    js.push(judgment(cae_l, "u0", Verdict::Rating(1)));
    js.push(judgment(cae_l, "u1", Verdict::Rating(2)));
    let table = aggregate_fluency(&t, &js).unwrap();
    let labels: Vec<&str> = table.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["gender", "Overall", "Overall Short", "Overall Long"]);
    // BST: short {3,4,2,3} = 3.0, long {1}, overall 13/5. CAE: short {2}, long {1,2}, overall 5/3.
    assert_eq!(table.rows[0].mean, [Some(5.0 / 3.0), Some(13.0 / 5.0)]);
    assert_eq!(table.rows[2].mean, [Some(2.0), Some(3.0)]);
    assert_eq!(table.rows[3].mean, [Some(1.5), Some(1.0)]);
    assert_eq!(table.rows[0].n, [3, 5]);
    assert_eq!(
        render_fluency(&table),
        "Experiment    |  CAE |  BST\n\
         --------------+------+-----\n\
         gender        | 1.67 | 2.60\n\
         Overall       | 1.67 | 2.60\n\
         Overall Short | 2.00 | 3.00\n\
         Overall Long  | 1.50 | 1.00\n"
    );
}

#[test]
fn human_study_reference_values() {
    let m = reference_meaning();
    assert_eq!(m["gender"], [15.23, 41.36, 43.41]);
    assert_eq!(m["political"], [14.55, 45.90, 39.55]);
    assert_eq!(m["sentiment"], [35.91, 40.91, 23.18]);
    let f = reference_fluency();
    assert_eq!(f["Overall"], [2.70, 2.91]);
    assert_eq!(f["Gender"], [2.42, 2.81]);
    assert_eq!(f["Overall Long"], [2.18, 2.62]);
}
