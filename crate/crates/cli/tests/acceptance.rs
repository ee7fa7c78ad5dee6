//! Acceptance suite: one PASS/FAIL line per criterion. Runs two full desk
//! pipelines, so expect it to take around half an hour on one core.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use bst_cli::config::PipelineConfig;
use bst_cli::manifest::file_hash;
use bst_cli::pipeline::Pipeline;
use bst_core::corpus::{Vocabulary, RESERVED, UNK_TOKEN};
use bst_core::eval::{render_transfer, DirectionAccuracy, TransferReport};
use bst_core::lexicon::{log_odds_delta, CountTable, LogOddsConfig, StyleLexicon};
use bst_core::seq2seq::{Direction, MTModel};
use bst_core::style::{copy_unk, Classifier, ClassifierConfig};
use bst_kernel::gradcheck::run_op_suite;
use bst_kernel::{softmax_tau, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display())))
        .unwrap()
}

// ---------------------------------------------------------------- runs

struct Run {
    root: PathBuf,
    mt_time: Duration,
    total_time: Duration,
    report: TransferReport,
}

struct Runs {
    _dir: tempfile::TempDir,
    first: Run,
    second: PathBuf,
}

/// Two desk pipelines with the default seed: the first stage by stage
/// through the library with timing, the second through the binary.
fn runs() -> &'static Runs {
    static RUNS: OnceLock<Runs> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("first");
        let p = Pipeline::new(&root, PipelineConfig::desk());
        let start = Instant::now();
        p.synth_data().unwrap();
        p.prepare(None, None).unwrap();
        p.lexicon().unwrap();
        let mt_start = Instant::now();
        p.train_mt().unwrap();
        let mt_time = mt_start.elapsed();
        p.train_classifier().unwrap();
        p.train_style().unwrap();
        p.transfer_test().unwrap();
        let report = p.evaluate().unwrap();
        let total_time = start.elapsed();
        eprintln!("first pipeline run: {total_time:.1?}");

        let second = dir.path().join("second");
        let status = Command::new(env!("CARGO_BIN_EXE_bst"))
            .arg("--root")
            .arg(&second)
            .arg("pipeline")
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        assert!(status.success(), "second pipeline run failed");
        Runs {
            first: Run {
                root,
                mt_time,
                total_time,
                report,
            },
            second,
            _dir: dir,
        }
    })
}

// ---------------------------------------------------------------- criteria

fn gradient_suite() -> Check {
    let start = Instant::now();
    let reports = run_op_suite(20, 1e-5, 7).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    for r in &reports {
        ensure(r.instances >= 20, format!("{} ran {} instances", r.op, r.instances))?;
        ensure(
            r.max_relative_error < 1e-4,
            format!("{} relative error {:.2e}", r.op, r.max_relative_error),
        )?;
    }
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:.1?}"))?;
    Ok(format!("{} ops x 20 instances, worst relative error {worst:.2e}, {elapsed:.1?}", reports.len()))
}

fn brute_delta(i: &BTreeMap<String, u64>, j: &BTreeMap<String, u64>) -> BTreeMap<String, f64> {
    let mut bg = i.clone();
    for (w, c) in j {
        *bg.entry(w.clone()).or_insert(0) += c;
    }
    let (n_i, n_j) = (i.values().sum::<u64>() as f64, j.values().sum::<u64>() as f64);
    let a0 = bg.values().sum::<u64>() as f64;
    let words: BTreeSet<&String> = i.keys().chain(j.keys()).collect();
    words
        .into_iter()
        .map(|w| {
            let a = (*bg.get(w).unwrap_or(&0)).max(1) as f64;
            let yi = *i.get(w).unwrap_or(&0) as f64;
            let yj = *j.get(w).unwrap_or(&0) as f64;
            let li = ((yi + a) / (n_i + a0 - yi - a)).ln();
            let lj = ((yj + a) / (n_j + a0 - yj - a)).ln();
            (w.clone(), li - lj)
        })
        .collect()
}

fn log_odds_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut worst = 0.0f64;
    let counts = |rng: &mut ChaCha8Rng, v: usize| -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for w in 0..v {
            if rng.gen_bool(0.8) {
                out.insert(format!("w{w}"), rng.gen_range(1..30));
            }
        }
        out
    };
    let mut tables = 0;
    while tables < 100 {
        let v = rng.gen_range(2..15);
        let (i, j) = (counts(&mut rng, v), counts(&mut rng, v));
        // A single shared word leaves the odds undefined.
        if i.len() < 2 || j.len() < 2 {
            continue;
        }
        tables += 1;
        let ti: CountTable = i.iter().map(|(w, c)| (w.clone(), *c)).collect();
        let tj: CountTable = j.iter().map(|(w, c)| (w.clone(), *c)).collect();
        let cfg = LogOddsConfig::union_background(&ti, &tj);
        let got = log_odds_delta(&ti, &tj, &cfg).map_err(|e| e.to_string())?;
        let back = log_odds_delta(&tj, &ti, &cfg).map_err(|e| e.to_string())?;
        let want = brute_delta(&i, &j);
        ensure(got.len() == want.len(), "word sets differ")?;
        for (w, d) in &want {
            worst = worst.max((got[w] - d).abs());
            ensure(got[w] == -back[w], format!("antisymmetry broken for {w}"))?;
        }
    }
    ensure(worst <= 1e-12, format!("max deviation {worst:e}"))?;
    Ok(format!("100 tables, max deviation {worst:.1e}, antisymmetry exact"))
}

fn relaxation_limit() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut least = 1.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(2..40);
        let mut logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let top = rng.gen_range(0..n);
        let rest = logits.iter().enumerate().filter(|&(k, _)| k != top).map(|(_, v)| *v).fold(f64::MIN, f64::max);
        logits[top] = rest + rng.gen_range(1.0..3.0);
        let p = softmax_tau(&Tensor::row(&logits).unwrap(), 1e-3).map_err(|e| e.to_string())?;
        least = least.min(p.data()[top]);
    }
    ensure(least > 0.999, format!("argmax mass {least}"))?;

    let config = ClassifierConfig {
        embedding: 6,
        filters: 5,
        width: 3,
        seed: 12,
        ..ClassifierConfig::desk()
    };
    let words: Vec<String> = RESERVED.iter().map(|s| s.to_string()).chain((0..12).map(|k| format!("w{k}"))).collect();
    let lexicon = StyleLexicon {
        words: [["w0", "w1"].map(String::from).into(), ["w2"].map(String::from).into()],
        deltas: Default::default(),
    };
    let c = Classifier::new(Vocabulary::from_tokens(words).unwrap(), &lexicon, config).map_err(|e| e.to_string())?;
    let v = c.vocab().len();
    let mut gap = 0.0f64;
    for _ in 0..100 {
        let len = rng.gen_range(1..10);
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(RESERVED.len()..v)).collect();
        let hard = c.classify_ids(&[ids.clone()]).map_err(|e| e.to_string())?[0];
        let onehot: Vec<Vec<f64>> = ids
            .iter()
            .map(|&i| (0..v).map(|k| if k == i { 1.0 } else { 0.0 }).collect())
            .collect();
        let soft = c.classify_soft(&onehot).map_err(|e| e.to_string())?;
        gap = gap.max((hard[0] - soft[0]).abs()).max((hard[1] - soft[1]).abs());
    }
    ensure(gap <= 1e-12, format!("hard/soft gap {gap:e}"))?;
    Ok(format!("min argmax mass {least:.6} at tau 1e-3, hard/soft gap {gap:.1e}"))
}

fn synthetic_mt() -> Check {
    let run = &runs().first;
    let p = Pipeline::new(&run.root, PipelineConfig::desk());
    let lines = std::fs::read_to_string(p.mt_path("train")).unwrap();
    let pairs: Vec<Value> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let longest = pairs
        .iter()
        .flat_map(|v| ["src", "tgt"].map(|k| v[k].as_str().unwrap().split_whitespace().count()))
        .max()
        .unwrap_or(0);
    ensure(pairs.len() == 5000, format!("{} training pairs", pairs.len()))?;
    ensure(longest <= 12, format!("sentences up to {longest} tokens"))?;
    let ef = MTModel::load(&p.mt_checkpoint(Direction::EToF)).map_err(|e| e.to_string())?;
    let vocab = ef.src_vocab().len().max(ef.tgt_vocab().len());
    ensure(vocab <= 200, format!("vocabulary of {vocab}"))?;
    ensure(ef.dims().hidden == 64, format!("hidden {}", ef.dims().hidden))?;
    let summary = read_json(&p.report("mt.json"));
    let mut parts = Vec::new();
    for d in summary.as_array().unwrap() {
        let (acc, bleu) = (d["test_accuracy"].as_f64().unwrap(), d["test_bleu"].as_f64().unwrap());
        let name = d["direction"].as_str().unwrap();
        ensure(acc >= 0.98, format!("{name} token accuracy {acc}"))?;
        ensure(bleu >= 90.0, format!("{name} BLEU {bleu}"))?;
        parts.push(format!("{name} accuracy {:.2}% BLEU {bleu:.1}", 100.0 * acc));
    }
    ensure(run.mt_time <= Duration::from_secs(15 * 60), format!("training took {:.1?}", run.mt_time))?;
    Ok(format!("{}; both directions trained in {:.0?}", parts.join(", "), run.mt_time))
}

fn end_to_end() -> Check {
    let run = &runs().first;
    let p = Pipeline::new(&run.root, PipelineConfig::desk());
    let classifiers = read_json(&p.report("classifier.json"));
    let judge = classifiers
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["role"] == "judge")
        .ok_or("no judge classifier summary")?;
    let judge_acc = judge["test_accuracy"].as_f64().unwrap();
    let style = read_json(&p.report("style.json"));
    let lambda = style["lambda_c"].as_f64().unwrap();
    let tau = style["final_tau"].as_f64().unwrap();
    let r = &run.report;
    let retention = r.content_retention.ok_or("no content retention")?;
    ensure(judge_acc >= 0.99, format!("held-out classifier accuracy {judge_acc}"))?;
    ensure(lambda == 15.0, format!("lambda_c {lambda}"))?;
    ensure((tau - 1e-3).abs() < 1e-12, format!("final tau {tau}"))?;
    ensure(r.aggregate >= 0.80, format!("transfer accuracy {}", r.aggregate))?;
    ensure(retention >= 0.70, format!("content retention {retention}"))?;
    ensure(run.total_time <= Duration::from_secs(30 * 60), format!("pipeline took {:.1?}", run.total_time))?;
    let dirs: Vec<String> = r
        .directions
        .iter()
        .map(|d| format!("{}->{} {:.1}%", d.source, d.target, 100.0 * d.accuracy))
        .collect();
    Ok(format!(
        "judge {:.1}%, transfer {:.1}% ({}), retention {:.1}%, pipeline {:.0?}",
        100.0 * judge_acc,
        100.0 * r.aggregate,
        dirs.join(", "),
        100.0 * retention,
        run.total_time
    ))
}

fn manifest_hashes(p: &Pipeline, command: &str, side: &str) -> BTreeMap<String, String> {
    serde_json::from_value(read_json(&p.manifest_path(command))[side].clone()).unwrap()
}

fn loss_identity() -> Check {
    let run = &runs().first;
    let p = Pipeline::new(&run.root, PipelineConfig::desk());
    let style = read_json(&p.report("style.json"));
    let lambda = style["lambda_c"].as_f64().unwrap();
    let text = std::fs::read_to_string(p.report("style_metrics.jsonl")).unwrap();
    let mut steps = 0;
    let mut worst = 0.0f64;
    for line in text.lines() {
        let r: Value = serde_json::from_str(line).unwrap();
        let f = |k: &str| r[k].as_f64().unwrap();
        worst = worst.max((f("l_gen") - (f("l_recon") + lambda * f("l_class"))).abs());
        steps += 1;
    }
    ensure(steps >= 500, format!("{steps} logged steps"))?;
    ensure(worst == 0.0, format!("max identity gap {worst:e}"))?;
    ensure(style["max_identity_gap"].as_f64() == Some(0.0), "reported identity gap is nonzero")?;

    let guide = p.checkpoint("classifier.guide.ckpt");
    let trained = &manifest_hashes(&p, "train-classifier", "outputs")["checkpoints/classifier.guide.ckpt"];
    let now = file_hash(&guide).map_err(|e| e.to_string())?;
    ensure(style["guide_hash_before"] == style["guide_hash_after"], "guide changed during training")?;
    ensure(style["guide_hash_before"].as_str() == Some(now.as_str()), "guide hash differs from the file")?;
    ensure(trained == &now, "guide differs from the trained checkpoint")?;

    let mt_out = manifest_hashes(&p, "train-mt", "outputs");
    let style_in = manifest_hashes(&p, "train-style", "inputs");
    for ckpt in ["checkpoints/mt.ef.ckpt", "checkpoints/mt.fe.ckpt"] {
        ensure(mt_out.get(ckpt) == style_in.get(ckpt), format!("{ckpt} changed before style training"))?;
        let current = file_hash(&run.root.join(ckpt)).map_err(|e| e.to_string())?;
        ensure(mt_out[ckpt] == current, format!("{ckpt} changed during style training"))?;
    }
    Ok(format!(
        "{steps} steps, max identity gap {worst:e}, guide and translation checkpoints byte-identical"
    ))
}

fn copy_mechanism() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut unks, mut ties, mut kept) = (0, 0, 0);
    for case in 0..50 {
        let n = rng.gen_range(1..10);
        let source: Vec<String> = (0..n).map(|i| format!("src{case}.{i}")).collect();
        let (mut output, mut attention, mut expected) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..rng.gen_range(1..10) {
            let mut row: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.4)).collect();
            let peak = rng.gen_range(0..n);
            row[peak] = 0.8;
            let mut want = peak;
            if n > 1 && rng.gen_bool(0.25) {
                let other = (peak + rng.gen_range(1..n)) % n;
                row[other] = 0.8;
                want = peak.min(other);
                ties += 1;
            }
            attention.push(row);
            if rng.gen_bool(0.5) {
                output.push(UNK_TOKEN.to_string());
                expected.push(source[want].clone());
                unks += 1;
            } else {
                let w = format!("out{}", rng.gen_range(0..20));
                output.push(w.clone());
                expected.push(w);
                kept += 1;
            }
        }
        let got = copy_unk(&output, &attention, &source).map_err(|e| e.to_string())?;
        ensure(got == expected, format!("case {case}: {got:?} != {expected:?}"))?;
    }
    Ok(format!("50 cases, {unks} UNKs replaced ({ties} rows with ties), {kept} other tokens untouched"))
}

fn files_under(root: &Path) -> BTreeSet<PathBuf> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out
}

fn reproducibility() -> Check {
    let r = runs();
    let (a, b) = (files_under(&r.first.root), files_under(&r.second));
    ensure(a == b, format!("file sets differ: {:?}", a.symmetric_difference(&b).collect::<Vec<_>>()))?;
    let differing: Vec<String> = a
        .iter()
        .filter(|f| std::fs::read(r.first.root.join(f)).unwrap() != std::fs::read(r.second.join(f)).unwrap())
        .map(|f| f.display().to_string())
        .collect();
    ensure(differing.is_empty(), format!("differing files: {differing:?}"))?;
    let ckpts = a.iter().filter(|f| f.starts_with("checkpoints")).count();
    let reports = a.iter().filter(|f| f.starts_with("reports")).count();
    Ok(format!("{} files identical ({ckpts} checkpoints, {reports} reports)", a.len()))
}

fn protocol_aggregation() -> Check {
    let dir = tempfile::tempdir().unwrap();
    for name in common::FIXTURES {
        let r = common::replay_fixture(name, dir.path());
        ensure(r.rejected.is_empty(), format!("{name}: submissions rejected with {:?}", r.rejected))?;
        ensure(r.rows == r.expected_rows, format!("{name}: {:?} != {:?}", r.rows, r.expected_rows))?;
        ensure(r.rendered == r.expected_text, format!("{name}: layout\n{}", r.rendered))?;
    }
    let d = |s: &str, t: &str, n, correct| DirectionAccuracy {
        source: s.into(),
        target: t.into(),
        n,
        correct,
        accuracy: correct as f64 / n as f64,
    };
    let report = TransferReport {
        experiment: "political".into(),
        system: "BST".into(),
        directions: vec![d("democratic", "republican", 8, 7), d("republican", "democratic", 8, 6)],
        aggregate: 13.0 / 16.0,
        n: 16,
        content_retention: None,
        reference: Default::default(),
    };
    let want = "\
Experiment                 |   BST
---------------------------+------
political                  | 81.25
  democratic -> republican | 87.50
  republican -> democratic | 75.00
";
    ensure(render_transfer(&report) == want, format!("transfer layout\n{}", render_transfer(&report)))?;
    Ok(format!("{} fixture logs replayed over HTTP, tables and layouts exact", common::FIXTURES.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("gradient suite", gradient_suite),
        ("log-odds oracle", log_odds_oracle),
        ("relaxation limit", relaxation_limit),
        ("synthetic translation", synthetic_mt),
        ("end-to-end transfer", end_to_end),
        ("loss identity and frozen models", loss_identity),
        ("copy mechanism", copy_mechanism),
        ("reproducibility", reproducibility),
        ("protocol aggregation", protocol_aggregation),
    ];
    let filter: HashSet<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let id = (k + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {id} {name}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} {name}: FAIL ({detail})");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
