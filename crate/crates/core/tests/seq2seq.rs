use std::sync::OnceLock;

use bst_core::corpus::{build_vocab, gen_synthetic, ParallelCorpus, Pivot, Sentence, SyntheticSpec, Vocabulary, PAD, RESERVED};
use bst_core::seq2seq::{
    attend, backtranslate_batch, backtranslate_encode, evaluate, train_mt, Direction, MTModel, ModelDims, MtTrainConfig,
};
use bst_kernel::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vocab(words: &[&str]) -> Vocabulary {
    let tokens = RESERVED.iter().chain(words).map(|s| s.to_string()).collect();
    Vocabulary::from_tokens(tokens).unwrap()
}

fn vecmat(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (rows, cols) = w.dims2().unwrap();
    let d = w.data();
    (0..cols).map(|j| (0..rows).map(|i| x[i] * d[i * cols + j]).sum()).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One scalar LSTM pass over `inputs`, in reverse when asked. Returns the
/// hidden state at each position.
fn lstm_pass(model: &MTModel, prefix: &str, inputs: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
    let p = |n: &str| model.params().by_name(&format!("{prefix}.{n}")).unwrap();
    let (w_ih, w_hh, bias) = (p("w_ih"), p("w_hh"), p("bias").data());
    let hidden = w_hh.dims2().unwrap().0;
    let (mut h, mut c) = (vec![0.0; hidden], vec![0.0; hidden]);
    let mut out = vec![Vec::new(); inputs.len()];
    let order: Vec<usize> = if reverse {
        (0..inputs.len()).rev().collect()
    } else {
        (0..inputs.len()).collect()
    };
    for t in order {
        let a = vecmat(&inputs[t], w_ih);
        let b = vecmat(&h, w_hh);
        for j in 0..hidden {
            let pre = |k: usize| a[k * hidden + j] + b[k * hidden + j] + bias[k * hidden + j];
            let (i, f, g, o) = (sigmoid(pre(0)), sigmoid(pre(1)), pre(2).tanh(), sigmoid(pre(3)));
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        out[t] = h.clone();
    }
    out
}

/// Stacked bidirectional encoder evaluated position by position.
fn encoder_oracle(model: &MTModel, ids: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let emb = model.params().by_name("enc.emb").unwrap();
    let mut inputs: Vec<Vec<f64>> = ids.iter().map(|&i| emb.row_slice(i).to_vec()).collect();
    let mut summary = Vec::new();
    for l in 0..model.dims().layers {
        let fwd = lstm_pass(model, &format!("enc.l{l}.fwd"), &inputs, false);
        let bwd = lstm_pass(model, &format!("enc.l{l}.bwd"), &inputs, true);
        summary = fwd[ids.len() - 1].iter().chain(&bwd[0]).copied().collect();
        inputs = fwd.iter().zip(&bwd).map(|(f, b)| f.iter().chain(b).copied().collect()).collect();
    }
    (inputs, summary)
}

fn random_model(seed: u64, layers: usize) -> MTModel {
    let dims = ModelDims {
        embedding: 3,
        hidden: 4,
        layers,
        attention: 5,
    };
    let v = vocab(&["a", "b", "c", "d"]);
    MTModel::new(Direction::EToF, v.clone(), v, dims, seed).unwrap()
}

#[test]
fn encoder_matches_scalar_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for layers in [1, 2] {
        let model = random_model(9 + layers as u64, layers);
        for _ in 0..10 {
            let len = rng.gen_range(1..7);
            let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(3..8)).collect();
            let z = model.encode_ids(&ids).unwrap();
            let (states, summary) = encoder_oracle(&model, &ids);
            assert_eq!(z.states.shape(), &[len, 8]);
            for (t, row) in states.iter().enumerate() {
                for (a, b) in z.states.row_slice(t).iter().zip(row) {
                    assert!((a - b).abs() < 1e-12, "layers {layers} position {t}");
                }
            }
            for (a, b) in z.summary.data().iter().zip(&summary) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zeroed_encoder_matches_scalar_recurrence() {
    let mut model = random_model(2, 2);
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let shape = model.params().get(id).shape().to_vec();
        model.params_mut().set(id, Tensor::zeros(&shape)).unwrap();
    }
    let z = model.encode_ids(&[4, 5, 6]).unwrap();
    let (states, _) = encoder_oracle(&model, &[4, 5, 6]);
    assert!(states.iter().flatten().all(|&v| v == 0.0));
    assert!(z.states.data().iter().all(|&v| v == 0.0));
}

#[test]
fn padding_does_not_leak_into_shorter_rows() {
    let model = random_model(5, 2);
    let alone = model.encode_ids(&[4, 5]).unwrap();
    let batched = model.encode_ids_batch(&[vec![4, 5], vec![6, 7, 4, 5, 6]]).unwrap();
    assert_eq!(alone, batched[0]);
    assert_ne!(PAD, 4);
}

#[test]
fn attention_of_two_states_is_logistic() {
    let states = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let a = attend(&[1.0, 0.0], &states).unwrap();
    let e = std::f64::consts::E;
    assert!((a.weights[0] - e / (e + 1.0)).abs() < 1e-15);
    assert!((a.weights[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
    assert!((a.context[0] - e / (e + 1.0)).abs() < 1e-15);
}

#[test]
fn untrained_decoding_keeps_attention_normalised() {
    let model = random_model(13, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let len = rng.gen_range(1..8);
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(3..8)).collect();
        let z = model.encode_ids(&ids).unwrap();
        let d = model.decode_greedy(&z, 60).unwrap();
        assert!(d.ids.len() <= 50);
        for row in &d.attention {
            assert_eq!(row.len(), len);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

struct Toy {
    pivot: Pivot,
    ef: MTModel,
    test: ParallelCorpus,
}

/// A small bijection-plus-reversal task trained once for the tests below.
fn toy() -> &'static Toy {
    static TOY: OnceLock<Toy> = OnceLock::new();
    TOY.get_or_init(|| {
        let mut spec = SyntheticSpec::with_sizes(12, 1, 1);
        spec.parallel_pairs = 1600;
        spec.parallel_len = (2, 6);
        spec.rare_rate = 0.0;
        let (par, _, pivot) = gen_synthetic(&spec, 3).unwrap();
        let config = MtTrainConfig {
            dims: ModelDims {
                embedding: 16,
                hidden: 24,
                layers: 1,
                attention: 24,
            },
            vocab_size: 100,
            batch_size: 32,
            max_steps: 3000,
            eval_every: 250,
            patience: 3,
            dev_eval_size: 100,
            ..MtTrainConfig::desk()
        };
        let (ef, report) = train_mt(&par.slice(0..1400), &par.slice(1400..1500), Direction::EToF, &config).unwrap();
        assert!(report.best_dev_accuracy >= 0.98, "{:?}", report.evals);
        Toy {
            pivot,
            ef,
            test: par.slice(1500..1600),
        }
    })
}

#[test]
fn toy_model_learns_the_transform() {
    let t = toy();
    let (acc, bleu) = evaluate(&t.ef, &t.test).unwrap();
    assert!(acc >= 0.98, "token accuracy {acc}");
    assert!(bleu >= 90.0, "bleu {bleu}");
    let words: Vec<&String> = t.ef.src_vocab().content().iter().take(3).collect();
    let x: Sentence = words.iter().map(|w| w.to_string()).collect();
    let want: Sentence = words.iter().rev().map(|w| t.pivot.forward[*w].clone()).collect();
    assert_eq!(t.ef.translate(&x).unwrap(), want);
}

#[test]
fn reversal_gives_anti_diagonal_attention() {
    let t = toy();
    let sources: Vec<Sentence> = t.test.pairs.iter().map(|(e, _)| e.clone()).collect();
    let (mut mass, mut rows) = (0.0, 0usize);
    for ((_, decoded), src) in t.ef.translate_batch(&sources).unwrap().iter().zip(&sources) {
        let n = src.len();
        for (i, row) in decoded.attention.iter().enumerate().take(n) {
            let j = n - 1 - i;
            mass += row[j.saturating_sub(1)..=(j + 1).min(n - 1)].iter().sum::<f64>();
            rows += 1;
        }
    }
    let mean = mass / rows as f64;
    assert!(mean > 0.5, "mean anti-diagonal mass {mean}");
}

#[test]
fn back_translation_composes_translate_then_encode() {
    let t = toy();
    let f_vocab = build_vocab(t.test.pairs.iter().map(|(_, f)| f.as_slice()), 100).unwrap();
    let fe = MTModel::new(
        Direction::FToE,
        f_vocab,
        t.ef.src_vocab().clone(),
        t.ef.dims().clone(),
        21,
    )
    .unwrap();
    let ef_bytes = t.ef.to_bytes().unwrap();
    let fe_bytes = fe.to_bytes().unwrap();
    let xs: Vec<Sentence> = t.test.pairs.iter().take(20).map(|(e, _)| e.clone()).collect();
    let bts = backtranslate_batch(&xs, &t.ef, &fe).unwrap();
    for (x, bt) in xs.iter().zip(&bts) {
        assert_eq!(bt.pivot, t.pivot.translate(x));
        assert_eq!(bt.z, fe.encode(&t.pivot.translate(x)).unwrap());
        assert_eq!(backtranslate_encode(x, &t.ef, &fe).unwrap(), bt.z);
    }
    assert_eq!(t.ef.to_bytes().unwrap(), ef_bytes);
    assert_eq!(fe.to_bytes().unwrap(), fe_bytes);
    assert!(backtranslate_batch(&xs, &fe, &t.ef).is_err());
}
