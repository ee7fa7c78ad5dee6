use std::io::Write;
use std::path::Path;

use bst_kernel::{checkpoint, optimizer_step, AdamConfig, Graph, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::classifier::Classifier;
use super::{anneal_tau, TauSchedule};
use crate::corpus::splits::shuffle;
use crate::corpus::{Sentence, Style, StyledCorpus, Vocabulary, BOS, EOS, MAX_SENTENCE_LEN};
use crate::error::{io_err, Error, Result};
use crate::seq2seq::nets::{greedy_decode, memory_from, teacher_forced_nll, DecoderParams};
use crate::seq2seq::{training_failure, Decoded, EncoderOutput, ModelDims, INFERENCE_BATCH};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub lambda_c: f64,
    pub tau0: f64,
    pub tau_min: f64,
    /// Decay rate of the temperature; when absent it is chosen so the floor
    /// is reached on the last step.
    pub tau_rate: Option<f64>,
    pub dims: ModelDims,
    pub max_len: usize,
    pub steps: usize,
    /// Sentences per style in each step.
    pub batch_size: usize,
    pub clip_norm: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            lambda_c: 15.0,
            tau0: 1.0,
            tau_min: 1e-3,
            tau_rate: None,
            dims: ModelDims::default(),
            max_len: MAX_SENTENCE_LEN,
            steps: 20_000,
            batch_size: 32,
            clip_norm: 5.0,
            adam: AdamConfig::default(),
            seed: 1,
        }
    }
}

impl TransferConfig {
    pub fn desk() -> Self {
        Self {
            dims: ModelDims::desk(),
            steps: 4000,
            adam: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn schedule(&self) -> TauSchedule {
        match self.tau_rate {
            Some(rate) => TauSchedule {
                tau0: self.tau0,
                rate,
                floor: self.tau_min,
            },
            // Steps run 0..steps, so the last one sits on the floor.
            None => TauSchedule::reaching_floor(self.tau0, self.tau_min, self.steps.saturating_sub(1)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_c >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda_c must be non-negative, got {}", self.lambda_c)));
        }
        if !(self.tau0 > 0.0 && self.tau_min > 0.0 && self.tau_min <= self.tau0) {
            return Err(Error::InvalidArgument(format!(
                "temperatures need 0 < tau_min <= tau0, got {} and {}",
                self.tau_min, self.tau0
            )));
        }
        if self.tau_rate.is_some_and(|r| !(r >= 0.0)) {
            return Err(Error::InvalidArgument("tau_rate must be non-negative".into()));
        }
        if self.batch_size == 0 || self.max_len == 0 {
            return Err(Error::InvalidArgument("batch size and max length must be positive".into()));
        }
        self.dims.validate()
    }
}

/// The relaxed output `x̂` of a generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftSequence {
    pub probs: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub attention: Vec<Vec<f64>>,
}

impl SoftSequence {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub l_recon: f64,
    pub l_class: f64,
    pub l_gen: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub lambda_c: f64,
    pub records: Vec<StepRecord>,
}

impl TrainingStats {
    /// Largest `|L_gen - (L_recon + λ_c·L_class)|` over all steps.
    pub fn max_identity_gap(&self) -> f64 {
        self.records
            .iter()
            .map(|r| (r.l_gen - (r.l_recon + self.lambda_c * r.l_class)).abs())
            .fold(0.0, f64::max)
    }
}

/// One decoder per style over the shared meaning code. The two decoders live
/// in one parameter store under disjoint prefixes and share nothing.
#[derive(Clone, Debug)]
pub struct StyleGenerators {
    vocab: Vocabulary,
    dims: ModelDims,
    memory_width: usize,
    store: ParamStore,
    decoders: [DecoderParams; 2],
}

fn prefix(style: Style) -> &'static str {
    match style {
        Style::S1 => "gen.s1",
        Style::S2 => "gen.s2",
    }
}

impl StyleGenerators {
    pub fn new(vocab: Vocabulary, dims: ModelDims, memory_width: usize, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d1 = DecoderParams::create(&mut store, prefix(Style::S1), vocab.len(), memory_width, &dims, &mut rng)?;
        let d2 = DecoderParams::create(&mut store, prefix(Style::S2), vocab.len(), memory_width, &dims, &mut rng)?;
        Ok(Self {
            vocab,
            dims,
            memory_width,
            store,
            decoders: [d1, d2],
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn memory_width(&self) -> usize {
        self.memory_width
    }

    fn check_memory(&self, zs: &[&EncoderOutput]) -> Result<()> {
        match zs.iter().find(|z| z.width() != self.memory_width) {
            Some(z) => Err(Error::InvalidArgument(format!(
                "meaning code of width {} for generators expecting {}",
                z.width(),
                self.memory_width
            ))),
            None => Ok(()),
        }
    }

    /// Greedy decoding with the generator of `style`.
    pub fn decode_batch(&self, style: Style, zs: &[&EncoderOutput], max_len: usize) -> Result<Vec<Decoded>> {
        self.check_memory(zs)?;
        let max_len = max_len.min(MAX_SENTENCE_LEN);
        let mut out = Vec::with_capacity(zs.len());
        for chunk in zs.chunks(INFERENCE_BATCH) {
            let mut g = Graph::new();
            let (memory, summary) = memory_from(&mut g, chunk)?;
            let dec = self.decoders[style.index()].bind(&mut g, &self.store);
            out.extend(greedy_decode(&mut g, &dec, summary, &memory, max_len)?);
        }
        Ok(out)
    }

    /// Free-running relaxed generation: each step feeds back the expected
    /// embedding of the previous `softmax(o_t / τ)`. Stops after `max_len`
    /// steps (capped at 50) or at the first step whose most likely token is
    /// EOS; that step is not included.
    pub fn generate_soft(&self, style: Style, z: &EncoderOutput, tau: f64, max_len: usize) -> Result<SoftSequence> {
        self.check_memory(&[z])?;
        let mut g = Graph::new();
        let (memory, summary) = memory_from(&mut g, &[z])?;
        let dec = self.decoders[style.index()].bind(&mut g, &self.store);
        let mut state = dec.start(&mut g, summary)?;
        let mut input = dec.embed_ids(&mut g, &[BOS])?;
        let mut seq = SoftSequence {
            probs: Vec::new(),
            logits: Vec::new(),
            attention: Vec::new(),
        };
        for _ in 0..max_len.min(MAX_SENTENCE_LEN) {
            let (next, out) = dec.step(&mut g, &state, input, &memory)?;
            state = next;
            let p = g.softmax_tau(out.logits, tau)?;
            if g.value(p).argmax_rows()[0] == EOS {
                break;
            }
            seq.probs.push(g.value(p).data().to_vec());
            seq.logits.push(g.value(out.logits).data().to_vec());
            seq.attention.push(g.value(out.attention).data().to_vec());
            input = dec.embed_soft(&mut g, p)?;
        }
        Ok(seq)
    }

    /// Greedy-decode accuracy of reconstructing `sentences` from their codes.
    pub fn reconstruction_accuracy(&self, style: Style, zs: &[&EncoderOutput], sentences: &[Sentence]) -> Result<f64> {
        let decoded = self.decode_batch(style, zs, MAX_SENTENCE_LEN)?;
        let (mut hit, mut total) = (0usize, 0usize);
        for (d, s) in decoded.iter().zip(sentences) {
            let gold = self.vocab.encode(s);
            hit += d.ids.iter().zip(&gold).filter(|(a, b)| a == b).count();
            total += d.ids.len().max(gold.len());
        }
        Ok(hit as f64 / total.max(1) as f64)
    }

    fn metadata(&self) -> serde_json::Value {
        json!({
            "kind": "generators",
            "dims": self.dims,
            "memory_width": self.memory_width,
            "vocab": self.vocab,
            "vocab_hash": self.vocab.hash(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(checkpoint::encode(&self.store, &self.metadata())?)
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
            dims: ModelDims,
            memory_width: usize,
            vocab: Vocabulary,
            vocab_hash: String,
        }
        let meta: Meta = serde_json::from_value(meta).map_err(|source| Error::Json {
            context: "generator checkpoint metadata".into(),
            source,
        })?;
        if meta.kind != "generators" {
            return Err(Error::InvalidArgument(format!("checkpoint holds a `{}`, not generators", meta.kind)));
        }
        if meta.vocab.hash() != meta.vocab_hash {
            return Err(Error::VocabularyMismatch("generator vocabulary hash does not match".into()));
        }
        let decoders = [
            DecoderParams::find(&store, prefix(Style::S1), &meta.dims)?,
            DecoderParams::find(&store, prefix(Style::S2), &meta.dims)?,
        ];
        Ok(Self {
            vocab: meta.vocab,
            dims: meta.dims,
            memory_width: meta.memory_width,
            store,
            decoders,
        })
    }
}

/// The three loss nodes of one joint step.
pub(crate) struct JointLoss {
    pub recon: Var,
    pub class: Var,
    pub gen: Var,
}

/// Builds `L_gen = L_recon + λ_c·L_class` for one batch per style.
///
/// `L_recon` is the mean over styles of the teacher-forced token NLL of each
/// generator's own sentences. `L_class` is the mean over styles of the frozen
/// classifier's NLL of the generator's own style on its relaxed free-running
/// output, which runs for as many steps as the reference sentence.
pub(crate) fn joint_loss(
    g: &mut Graph,
    gens: &StyleGenerators,
    classifier: &Classifier,
    batches: [(&[&EncoderOutput], &[Vec<usize>]); 2],
    lambda_c: f64,
    tau: f64,
) -> Result<JointLoss> {
    let cls = classifier.bind_frozen(g);
    let mut recon = Vec::with_capacity(2);
    let mut class = Vec::with_capacity(2);
    for style in Style::BOTH {
        let (zs, targets) = batches[style.index()];
        let b = targets.len();
        let (memory, summary) = memory_from(g, zs)?;
        let dec = gens.decoders[style.index()].bind(g, &gens.store);
        let (r, _, _) = teacher_forced_nll(g, &dec, summary, &memory, targets)?;
        recon.push(r);

        let lengths: Vec<usize> = targets.iter().map(Vec::len).collect();
        let steps = *lengths.iter().max().expect("nonempty batch");
        let mut state = dec.start(g, summary)?;
        let mut input = dec.embed_ids(g, &vec![BOS; b])?;
        let mut probs = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (next, out) = dec.step(g, &state, input, &memory)?;
            state = next;
            let p = g.softmax_tau(out.logits, tau)?;
            probs.push(p);
            input = dec.embed_soft(g, p)?;
        }
        let logits = cls.logits_soft(g, &probs, &lengths)?;
        class.push(g.cross_entropy(logits, &vec![style.index(); b], &vec![1.0 / b as f64; b])?);
    }
    let recon_sum = g.add(recon[0], recon[1])?;
    let recon = g.scale(recon_sum, 0.5)?;
    let class_sum = g.add(class[0], class[1])?;
    let class = g.scale(class_sum, 0.5)?;
    let weighted = g.scale(class, lambda_c)?;
    let gen = g.add(recon, weighted)?;
    Ok(JointLoss { recon, class, gen })
}

/// Trains both generators against the frozen classifier. `z[i]` is the
/// meaning code of `train.sentences[i]`. Each step's losses are written to
/// `metrics` as one JSON line when given.
pub fn train_style_generators(
    train: &StyledCorpus,
    z: &[EncoderOutput],
    classifier: &Classifier,
    config: &TransferConfig,
    mut metrics: Option<&mut dyn Write>,
) -> Result<(StyleGenerators, TrainingStats)> {
    config.validate()?;
    if z.len() != train.len() {
        return Err(Error::InvalidArgument(format!("{} meaning codes for {} sentences", z.len(), train.len())));
    }
    let pools: [Vec<usize>; 2] = Style::BOTH.map(|s| (0..train.len()).filter(|&i| train.labels[i] == s).collect());
    if pools.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("generator training needs sentences of both styles".into()));
    }
    let width = z[0].width();
    let vocab = classifier.vocab().clone();
    let mut gens = StyleGenerators::new(vocab.clone(), config.dims.clone(), width, config.seed)?;
    let targets: Vec<Vec<usize>> = train
        .sentences
        .iter()
        .map(|s| {
            let mut ids = vocab.encode(s);
            ids.truncate(config.max_len);
            ids
        })
        .collect();
    let schedule = config.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e4);
    let mut orders = pools.clone();
    let mut cursors = [usize::MAX; 2];
    let mut stats = TrainingStats {
        lambda_c: config.lambda_c,
        records: Vec::with_capacity(config.steps),
    };
    for step in 0..config.steps {
        let tau = anneal_tau(step, &schedule);
        let mut picked: [Vec<usize>; 2] = Default::default();
        for s in 0..2 {
            if cursors[s] >= orders[s].len() || cursors[s] + config.batch_size > orders[s].len() {
                shuffle(&mut orders[s], &mut rng);
                cursors[s] = 0;
            }
            let end = (cursors[s] + config.batch_size).min(orders[s].len());
            picked[s] = orders[s][cursors[s]..end].to_vec();
            cursors[s] = end;
        }
        let zs: [Vec<&EncoderOutput>; 2] = [0, 1].map(|s| picked[s].iter().map(|&i| &z[i]).collect());
        let tg: [Vec<Vec<usize>>; 2] = [0, 1].map(|s| picked[s].iter().map(|&i| targets[i].clone()).collect());

        let record = (|| -> Result<StepRecord> {
            let mut g = Graph::new();
            let loss = joint_loss(
                &mut g,
                &gens,
                classifier,
                [(&zs[0], &tg[0]), (&zs[1], &tg[1])],
                config.lambda_c,
                tau,
            )?;
            let record = StepRecord {
                step,
                l_recon: g.value(loss.recon).item()?,
                l_class: g.value(loss.class).item()?,
                l_gen: g.value(loss.gen).item()?,
                tau,
            };
            let mut grads = g.backward(loss.gen)?;
            grads.clip_global_norm(config.clip_norm);
            optimizer_step(&mut gens.store, &grads, &config.adam)?;
            Ok(record)
        })()
        .map_err(training_failure(step))?;
        if !record.l_gen.is_finite() {
            return Err(Error::TrainingFailure {
                step,
                reason: "generator loss is not finite".into(),
            });
        }
        if step % 100 == 0 {
            log::info!(
                "generators step {step} recon {:.4} class {:.4} tau {tau:.4}",
                record.l_recon,
                record.l_class
            );
        }
        if let Some(w) = metrics.as_deref_mut() {
            let line = serde_json::to_string(&record).map_err(|source| Error::Json {
                context: "metrics record".into(),
                source,
            })?;
            writeln!(w, "{line}").map_err(io_err(Path::new("<metrics>")))?;
        }
        stats.records.push(record);
    }
    Ok((gens, stats))
}
