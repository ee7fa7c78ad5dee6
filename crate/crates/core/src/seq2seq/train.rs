use bst_kernel::{optimizer_step, AdamConfig, Graph, KernelError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nets::{teacher_forced_nll, Memory, ModelDims};
use super::{corpus_bleu, Direction, MTModel};
use crate::corpus::splits::shuffle;
use crate::corpus::{build_vocab, ParallelCorpus, Sentence};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MtTrainConfig {
    pub dims: ModelDims,
    pub vocab_size: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    /// Evaluations without a dev improvement before stopping.
    pub patience: usize,
    /// Dev sentences scored at each evaluation.
    pub dev_eval_size: usize,
    pub clip_norm: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for MtTrainConfig {
    fn default() -> Self {
        Self {
            dims: ModelDims::default(),
            vocab_size: 50_000,
            batch_size: 64,
            max_steps: 100_000,
            eval_every: 1000,
            patience: 5,
            dev_eval_size: 1000,
            clip_norm: 5.0,
            adam: AdamConfig::default(),
            seed: 1,
        }
    }
}

impl MtTrainConfig {
    pub fn desk() -> Self {
        Self {
            dims: ModelDims::desk(),
            vocab_size: 154,
            batch_size: 32,
            max_steps: 6000,
            eval_every: 250,
            patience: 4,
            dev_eval_size: 250,
            adam: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MtTrainReport {
    pub steps: usize,
    pub best_step: usize,
    pub best_dev_accuracy: f64,
    /// Training loss of every step's batch, before its update.
    pub losses: Vec<f64>,
    /// `(step, dev token accuracy)` at each evaluation.
    pub evals: Vec<(usize, f64)>,
}

pub(crate) fn training_failure(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Kernel(KernelError::NonFinite(op)) => Error::TrainingFailure {
            step,
            reason: format!("non-finite value in {op}"),
        },
        e => e,
    }
}

/// Loss of one batch and its gradients, or just the loss when `update` is off.
fn batch_step(model: &mut MTModel, src: &[Vec<usize>], tgt: &[Vec<usize>], config: &MtTrainConfig, update: bool) -> Result<f64> {
    let mut g = Graph::new();
    let (states, summary) = model.encoder().forward(&mut g, model.params(), src)?;
    let memory = Memory {
        states,
        lengths: src.iter().map(Vec::len).collect(),
    };
    let dec = model.decoder().bind(&mut g, model.params());
    let (loss, _, _) = teacher_forced_nll(&mut g, &dec, summary, &memory, tgt)?;
    let value = g.value(loss).item()?;
    if update {
        let mut grads = g.backward(loss)?;
        grads.clip_global_norm(config.clip_norm);
        optimizer_step(model.params_mut(), &grads, &config.adam)?;
    }
    Ok(value)
}

/// Mean teacher-forced loss of a batch without updating anything.
pub fn batch_loss(model: &MTModel, pairs: &ParallelCorpus) -> Result<f64> {
    let (src, tgt) = encode_pairs(model, pairs);
    let mut m = model.clone();
    batch_step(&mut m, &src, &tgt, &MtTrainConfig::default(), false)
}

fn encode_pairs(model: &MTModel, pairs: &ParallelCorpus) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    pairs
        .pairs
        .iter()
        .map(|(s, t)| (model.src_vocab().encode(s), model.tgt_vocab().encode(t)))
        .unzip()
}

/// Greedy-decode accuracy: matching positions over the longer of hypothesis
/// and reference, with references mapped through the target vocabulary.
pub fn token_accuracy(model: &MTModel, corpus: &ParallelCorpus) -> Result<f64> {
    Ok(evaluate(model, corpus)?.0)
}

/// `(token accuracy, corpus BLEU)` of greedy translations.
pub fn evaluate(model: &MTModel, corpus: &ParallelCorpus) -> Result<(f64, f64)> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("evaluation corpus is empty".into()));
    }
    let sources: Vec<Sentence> = corpus.pairs.iter().map(|(s, _)| s.clone()).collect();
    let refs: Vec<Sentence> = corpus
        .pairs
        .iter()
        .map(|(_, t)| model.tgt_vocab().decode(&model.tgt_vocab().encode(t)))
        .collect();
    let hyps: Vec<Sentence> = model.translate_batch(&sources)?.into_iter().map(|(s, _)| s).collect();
    let (mut hit, mut total) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(&refs) {
        hit += h.iter().zip(r).filter(|(a, b)| a == b).count();
        total += h.len().max(r.len());
    }
    Ok((hit as f64 / total.max(1) as f64, corpus_bleu(&hyps, &refs)?))
}

/// Teacher-forced cross-entropy training with early stopping on dev token
/// accuracy. Vocabularies are built from the training pairs.
pub fn train_mt(
    train: &ParallelCorpus,
    dev: &ParallelCorpus,
    direction: Direction,
    config: &MtTrainConfig,
) -> Result<(MTModel, MtTrainReport)> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::InvalidArgument("translation training needs nonempty train and dev corpora".into()));
    }
    if config.batch_size == 0 || config.eval_every == 0 {
        return Err(Error::InvalidArgument("batch size and eval interval must be positive".into()));
    }
    let src_vocab = build_vocab(train.pairs.iter().map(|(s, _)| s.as_slice()), config.vocab_size)?;
    let tgt_vocab = build_vocab(train.pairs.iter().map(|(_, t)| t.as_slice()), config.vocab_size)?;
    let mut model = MTModel::new(direction, src_vocab, tgt_vocab, config.dims.clone(), config.seed)?;
    let (src, tgt) = encode_pairs(&model, train);
    let dev = dev.slice(0..config.dev_eval_size.min(dev.len()));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..src.len()).collect();
    let mut cursor = order.len();
    let mut report = MtTrainReport {
        best_dev_accuracy: -1.0,
        ..MtTrainReport::default()
    };
    let mut best = model.params().clone();
    let mut stale = 0;
    for step in 0..config.max_steps {
        if cursor + config.batch_size > order.len() {
            shuffle(&mut order, &mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..(cursor + config.batch_size).min(order.len())];
        cursor += config.batch_size;
        let bs: Vec<Vec<usize>> = idx.iter().map(|&i| src[i].clone()).collect();
        let bt: Vec<Vec<usize>> = idx.iter().map(|&i| tgt[i].clone()).collect();
        let loss = batch_step(&mut model, &bs, &bt, config, true).map_err(training_failure(step))?;
        if !loss.is_finite() {
            return Err(Error::TrainingFailure {
                step,
                reason: "loss is not finite".into(),
            });
        }
        report.losses.push(loss);
        report.steps = step + 1;
        if (step + 1) % config.eval_every == 0 || step + 1 == config.max_steps {
            let acc = token_accuracy(&model, &dev)?;
            log::info!("{} step {} loss {loss:.4} dev accuracy {acc:.4}", direction.as_str(), step + 1);
            report.evals.push((step + 1, acc));
            if acc > report.best_dev_accuracy {
                report.best_dev_accuracy = acc;
                report.best_step = step + 1;
                best = model.params().clone();
                stale = 0;
            } else {
                stale += 1;
            }
            if acc >= 1.0 || stale >= config.patience {
                break;
            }
        }
    }
    *model.params_mut() = best;
    Ok((model, report))
}
