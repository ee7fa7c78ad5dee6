//! CNN style classifier over word embeddings plus the two lexicon indicator
//! features. Accepts hard token ids or per-step distributions over the
//! vocabulary.

use std::path::Path;

use bst_kernel::{checkpoint, optimizer_step, softmax_tau, AdamConfig, Graph, ParamId, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::splits::shuffle;
use crate::corpus::{Sentence, Style, StyledCorpus, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::lexicon::{indicator_matrix, StyleLexicon};
use crate::seq2seq::nets::INIT_SCALE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub embedding: usize,
    pub filters: usize,
    pub width: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            embedding: 300,
            filters: 100,
            width: 5,
            batch_size: 64,
            max_steps: 20_000,
            eval_every: 500,
            patience: 5,
            clip_norm: 5.0,
            adam: AdamConfig::default(),
            seed: 1,
        }
    }
}

impl ClassifierConfig {
    pub fn desk() -> Self {
        Self {
            embedding: 32,
            batch_size: 32,
            max_steps: 1500,
            eval_every: 100,
            patience: 4,
            ..Self::default()
        }
    }

    /// Width of one input step: embedding plus the two indicators.
    pub fn input_width(&self) -> usize {
        self.embedding + 2
    }
}

#[derive(Clone, Copy, Debug)]
struct Ids {
    emb: ParamId,
    conv_w: ParamId,
    conv_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

impl Ids {
    fn find(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            emb: store.id("cls.emb")?,
            conv_w: store.id("cls.conv.w")?,
            conv_b: store.id("cls.conv.b")?,
            out_w: store.id("cls.out.w")?,
            out_b: store.id("cls.out.b")?,
        })
    }
}

/// Classifier weights bound to one graph, either as trainable leaves or as
/// frozen constants.
pub(crate) struct BoundClassifier {
    emb: Var,
    indicators: Var,
    conv_w: Var,
    conv_b: Var,
    out_w: Var,
    out_b: Var,
    width: usize,
}

impl BoundClassifier {
    fn head(&self, g: &mut Graph, steps: Vec<Var>, lengths: &[usize]) -> Result<Var> {
        let seq = g.stack_steps(&steps)?;
        let pooled = g.conv1d_maxpool(seq, self.conv_w, self.conv_b, self.width, lengths)?;
        let act = g.tanh(pooled)?;
        Ok(g.affine(act, self.out_w, self.out_b)?)
    }

    pub(crate) fn logits_hard(&self, g: &mut Graph, batch: &[Vec<usize>]) -> Result<Var> {
        let lengths: Vec<usize> = batch.iter().map(Vec::len).collect();
        if lengths.is_empty() || lengths.contains(&0) {
            return Err(Error::InvalidArgument("classifier input must be nonempty".into()));
        }
        let t_max = *lengths.iter().max().expect("nonempty");
        let mut steps = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let ids: Vec<usize> = batch.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect();
            let e = g.gather_rows(self.emb, &ids)?;
            let i = g.gather_rows(self.indicators, &ids)?;
            steps.push(g.concat_cols(&[e, i])?);
        }
        self.head(g, steps, &lengths)
    }

    /// `probs[t]` is `[B, V]`; row `b` uses its first `lengths[b]` steps.
    pub(crate) fn logits_soft(&self, g: &mut Graph, probs: &[Var], lengths: &[usize]) -> Result<Var> {
        if probs.is_empty() || lengths.contains(&0) {
            return Err(Error::InvalidArgument("classifier input must be nonempty".into()));
        }
        let mut steps = Vec::with_capacity(probs.len());
        for &p in probs {
            let e = g.matmul(p, self.emb)?;
            let i = g.matmul(p, self.indicators)?;
            steps.push(g.concat_cols(&[e, i])?);
        }
        self.head(g, steps, lengths)
    }
}

/// Trained classifier `q_C(s | x)` with its vocabulary and lexicon.
#[derive(Clone, Debug)]
pub struct Classifier {
    vocab: Vocabulary,
    lexicon_words: [Vec<String>; 2],
    indicators: Tensor,
    config: ClassifierConfig,
    store: ParamStore,
    ids: Ids,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub steps: usize,
    pub best_step: usize,
    pub best_dev_accuracy: f64,
    pub evals: Vec<(usize, f64)>,
}

fn lexicon_from_words(words: &[Vec<String>; 2]) -> StyleLexicon {
    StyleLexicon {
        words: [words[0].iter().cloned().collect(), words[1].iter().cloned().collect()],
        deltas: Default::default(),
    }
}

impl Classifier {
    pub fn new(vocab: Vocabulary, lexicon: &StyleLexicon, config: ClassifierConfig) -> Result<Self> {
        if config.embedding == 0 || config.filters == 0 || config.width == 0 {
            return Err(Error::InvalidArgument(format!("classifier dims must be positive: {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (v, e, k) = (vocab.len(), config.embedding, config.filters);
        store.uniform("cls.emb", &[v, e], INIT_SCALE, &mut rng)?;
        store.uniform("cls.conv.w", &[k, config.width * config.input_width()], INIT_SCALE, &mut rng)?;
        store.zeros("cls.conv.b", &[1, k])?;
        store.uniform("cls.out.w", &[k, 2], INIT_SCALE, &mut rng)?;
        store.zeros("cls.out.b", &[1, 2])?;
        let ids = Ids::find(&store)?;
        let lexicon_words = [
            lexicon.words[0].iter().cloned().collect(),
            lexicon.words[1].iter().cloned().collect(),
        ];
        Ok(Self {
            indicators: indicator_matrix(&vocab, lexicon),
            vocab,
            lexicon_words,
            config,
            store,
            ids,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn lexicon(&self) -> StyleLexicon {
        lexicon_from_words(&self.lexicon_words)
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> BoundClassifier {
        let mut leaf = |id: ParamId| {
            if trainable {
                g.param(&self.store, id)
            } else {
                g.constant(self.store.get(id).clone())
            }
        };
        let (emb, conv_w, conv_b, out_w, out_b) = (
            leaf(self.ids.emb),
            leaf(self.ids.conv_w),
            leaf(self.ids.conv_b),
            leaf(self.ids.out_w),
            leaf(self.ids.out_b),
        );
        BoundClassifier {
            emb,
            indicators: g.constant(self.indicators.clone()),
            conv_w,
            conv_b,
            out_w,
            out_b,
            width: self.config.width,
        }
    }

    /// Binds the weights as constants: gradients stop here.
    pub(crate) fn bind_frozen(&self, g: &mut Graph) -> BoundClassifier {
        self.bind(g, false)
    }

    fn probabilities(g: &Graph, logits: Var) -> Result<Vec<[f64; 2]>> {
        let p = softmax_tau(g.value(logits), 1.0)?;
        Ok(p.data().chunks(2).map(|r| [r[0], r[1]]).collect())
    }

    /// `q_C(s | x)` for each sentence of already encoded ids.
    pub fn classify_ids(&self, batch: &[Vec<usize>]) -> Result<Vec<[f64; 2]>> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(256) {
            let mut g = Graph::new();
            let b = self.bind(&mut g, false);
            let logits = b.logits_hard(&mut g, chunk)?;
            out.extend(Self::probabilities(&g, logits)?);
        }
        Ok(out)
    }

    pub fn classify_tokens(&self, tokens: &[String]) -> Result<[f64; 2]> {
        Ok(self.classify_ids(&[self.vocab.encode(tokens)])?[0])
    }

    /// Classifies a relaxed sequence: one probability vector over the
    /// classifier vocabulary per step.
    pub fn classify_soft(&self, probs: &[Vec<f64>]) -> Result<[f64; 2]> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("classifier input must be nonempty".into()));
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let mut steps = Vec::with_capacity(probs.len());
        for p in probs {
            if p.len() != self.vocab.len() {
                return Err(Error::VocabularyMismatch(format!(
                    "soft token over {} entries, classifier vocabulary has {}",
                    p.len(),
                    self.vocab.len()
                )));
            }
            steps.push(g.constant(Tensor::row(p)?));
        }
        let logits = b.logits_soft(&mut g, &steps, &[probs.len()])?;
        Ok(Self::probabilities(&g, logits)?[0])
    }

    /// Most probable style per sentence; exact ties go to the first style.
    pub fn predict(&self, sentences: &[Sentence]) -> Result<Vec<Style>> {
        let ids: Vec<Vec<usize>> = sentences.iter().map(|s| self.vocab.encode(s)).collect();
        Ok(self
            .classify_ids(&ids)?
            .into_iter()
            .map(|p| if p[1] > p[0] { Style::S2 } else { Style::S1 })
            .collect())
    }

    pub fn accuracy(&self, corpus: &StyledCorpus) -> Result<f64> {
        if corpus.is_empty() {
            return Err(Error::InvalidArgument("accuracy of an empty corpus".into()));
        }
        let pred = self.predict(&corpus.sentences)?;
        let hits = pred.iter().zip(&corpus.labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / corpus.len() as f64)
    }

    /// Checkpoint bytes; equal bytes mean equal weights.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(checkpoint::encode(&self.store, &self.metadata())?)
    }

    fn metadata(&self) -> serde_json::Value {
        json!({
            "kind": "classifier",
            "config": self.config,
            "vocab": self.vocab,
            "vocab_hash": self.vocab.hash(),
            "lexicon": self.lexicon_words,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(path, &self.store, &self.metadata())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, meta) = checkpoint::load(path)?;
        Self::from_parts(store, meta)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (store, meta) = checkpoint::decode(bytes)?;
        Self::from_parts(store, meta)
    }

    fn from_parts(store: ParamStore, meta: serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            kind: String,
            config: ClassifierConfig,
            vocab: Vocabulary,
            vocab_hash: String,
            lexicon: [Vec<String>; 2],
        }
        let meta: Meta = serde_json::from_value(meta).map_err(|source| Error::Json {
            context: "classifier checkpoint metadata".into(),
            source,
        })?;
        if meta.kind != "classifier" {
            return Err(Error::InvalidArgument(format!("checkpoint holds a `{}`, not a classifier", meta.kind)));
        }
        if meta.vocab.hash() != meta.vocab_hash {
            return Err(Error::VocabularyMismatch("classifier vocabulary hash does not match".into()));
        }
        let lexicon = lexicon_from_words(&meta.lexicon);
        Ok(Self {
            indicators: indicator_matrix(&meta.vocab, &lexicon),
            ids: Ids::find(&store)?,
            vocab: meta.vocab,
            lexicon_words: meta.lexicon,
            config: meta.config,
            store,
        })
    }
}

/// Minimises `-log q_C(s | x)` over `train`, keeping the weights with the
/// best accuracy on `dev`.
pub fn train_classifier(
    train: &StyledCorpus,
    dev: &StyledCorpus,
    vocab: &Vocabulary,
    lexicon: &StyleLexicon,
    config: &ClassifierConfig,
) -> Result<(Classifier, ClassifierReport)> {
    for s in Style::BOTH {
        if train.count(s) == 0 {
            return Err(Error::InvalidArgument(format!(
                "classifier training corpus has no `{}` sentences",
                train.style_name(s)
            )));
        }
    }
    if dev.is_empty() || config.batch_size == 0 || config.eval_every == 0 {
        return Err(Error::InvalidArgument("classifier needs a dev set, a batch size and an eval interval".into()));
    }
    let mut model = Classifier::new(vocab.clone(), lexicon, config.clone())?;
    let ids: Vec<Vec<usize>> = train.sentences.iter().map(|s| vocab.encode(s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xc1a5);
    let mut order: Vec<usize> = (0..ids.len()).collect();
    let mut cursor = order.len();
    let mut report = ClassifierReport {
        best_dev_accuracy: -1.0,
        ..ClassifierReport::default()
    };
    let mut best = model.store.clone();
    let mut stale = 0;
    for step in 0..config.max_steps {
        if cursor + config.batch_size > order.len() {
            shuffle(&mut order, &mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..(cursor + config.batch_size).min(order.len())];
        cursor += config.batch_size;
        let batch: Vec<Vec<usize>> = idx.iter().map(|&i| ids[i].clone()).collect();
        let targets: Vec<usize> = idx.iter().map(|&i| train.labels[i].index()).collect();
        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let step_result = (|| -> Result<()> {
            let logits = bound.logits_hard(&mut g, &batch)?;
            let loss = g.cross_entropy(logits, &targets, &vec![1.0 / batch.len() as f64; batch.len()])?;
            let mut grads = g.backward(loss)?;
            grads.clip_global_norm(config.clip_norm);
            optimizer_step(&mut model.store, &grads, &config.adam)?;
            Ok(())
        })();
        step_result.map_err(crate::seq2seq::training_failure(step))?;
        report.steps = step + 1;
        if (step + 1) % config.eval_every == 0 || step + 1 == config.max_steps {
            let acc = model.accuracy(dev)?;
            log::info!("classifier step {} dev accuracy {acc:.4}", step + 1);
            report.evals.push((step + 1, acc));
            if acc > report.best_dev_accuracy {
                report.best_dev_accuracy = acc;
                report.best_step = step + 1;
                best = model.store.clone();
                stale = 0;
            } else {
                stale += 1;
            }
            if acc >= 1.0 || stale >= config.patience {
                break;
            }
        }
    }
    model.store = best;
    Ok((model, report))
}
