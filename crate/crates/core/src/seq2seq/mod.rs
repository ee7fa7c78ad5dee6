//! Attentional encoder–decoder translation between the source language `e`
//! and the pivot `f`, and extraction of the meaning code `z`.

mod bleu;
pub(crate) mod nets;
mod train;

use std::path::Path;

use bst_kernel::{checkpoint, softmax_tau, Graph, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{Sentence, Vocabulary, MAX_SENTENCE_LEN};
use crate::error::{Error, Result};

pub use bleu::corpus_bleu;
pub use nets::{Decoded, EncoderOutput, ModelDims};
pub(crate) use train::training_failure;
pub use train::{batch_loss, evaluate, token_accuracy, train_mt, MtTrainConfig, MtTrainReport};

use nets::{greedy_decode, memory_from, split_outputs, DecoderParams, EncoderParams};

/// Sentences per graph when encoding or decoding many at once.
pub(crate) const INFERENCE_BATCH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "e->f")]
    EToF,
    #[serde(rename = "f->e")]
    FToE,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::EToF => "e->f",
            Direction::FToE => "f->e",
        }
    }
}

/// Alignment of one decoder state against a set of source states.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionState {
    pub query: Vec<f64>,
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

/// Dot-product attention of an already projected query over `states: [T, D]`.
pub fn attend(query: &[f64], states: &Tensor) -> Result<AttentionState> {
    let (t, d) = states.dims2()?;
    if query.len() != d {
        return Err(Error::InvalidArgument(format!("query width {} vs state width {d}", query.len())));
    }
    let scores: Vec<f64> = (0..t)
        .map(|s| states.row_slice(s).iter().zip(query).map(|(a, b)| a * b).sum())
        .collect();
    let weights = softmax_tau(&Tensor::row(&scores)?, 1.0)?.into_data();
    let mut context = vec![0.0; d];
    for (s, &w) in weights.iter().enumerate() {
        for (c, x) in context.iter_mut().zip(states.row_slice(s)) {
            *c += w * x;
        }
    }
    Ok(AttentionState {
        query: query.to_vec(),
        weights,
        context,
    })
}

/// A trained (or freshly initialised) translation model for one direction.
#[derive(Clone, Debug)]
pub struct MTModel {
    direction: Direction,
    src: Vocabulary,
    tgt: Vocabulary,
    dims: ModelDims,
    store: ParamStore,
    encoder: EncoderParams,
    decoder: DecoderParams,
}

impl MTModel {
    pub fn new(direction: Direction, src: Vocabulary, tgt: Vocabulary, dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::create(&mut store, "enc", src.len(), &dims, &mut rng)?;
        let decoder = DecoderParams::create(&mut store, "dec", tgt.len(), 2 * dims.hidden, &dims, &mut rng)?;
        Ok(Self {
            direction,
            src,
            tgt,
            dims,
            store,
            encoder,
            decoder,
        })
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn src_vocab(&self) -> &Vocabulary {
        &self.src
    }

    pub fn tgt_vocab(&self) -> &Vocabulary {
        &self.tgt
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub(crate) fn encoder(&self) -> &EncoderParams {
        &self.encoder
    }

    pub(crate) fn decoder(&self) -> &DecoderParams {
        &self.decoder
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("cannot encode an empty sequence".into()));
        }
        if ids.len() > MAX_SENTENCE_LEN {
            return Err(Error::InvalidArgument(format!(
                "sequence of {} tokens exceeds {MAX_SENTENCE_LEN}",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.src.len()) {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} outside source vocabulary of {}",
                self.src.len()
            )));
        }
        Ok(())
    }

    pub fn encode_ids(&self, ids: &[usize]) -> Result<EncoderOutput> {
        Ok(self.encode_ids_batch(std::slice::from_ref(&ids.to_vec()))?.remove(0))
    }

    /// Encodes many id sequences; results are identical to encoding one at a time.
    pub fn encode_ids_batch(&self, batch: &[Vec<usize>]) -> Result<Vec<EncoderOutput>> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(INFERENCE_BATCH) {
            for ids in chunk {
                self.check_ids(ids)?;
            }
            let mut g = Graph::new();
            let (states, summary) = self.encoder.forward(&mut g, &self.store, chunk)?;
            let lengths: Vec<usize> = chunk.iter().map(Vec::len).collect();
            out.extend(split_outputs(&g, states, summary, &lengths)?);
        }
        Ok(out)
    }

    /// `z = Encoder(x)` over source tokens; out-of-vocabulary words map to `<unk>`.
    pub fn encode(&self, tokens: &[String]) -> Result<EncoderOutput> {
        self.encode_ids(&self.src.encode(tokens))
    }

    pub fn encode_batch(&self, sentences: &[Sentence]) -> Result<Vec<EncoderOutput>> {
        let ids: Vec<Vec<usize>> = sentences.iter().map(|s| self.src.encode(s)).collect();
        self.encode_ids_batch(&ids)
    }

    /// Greedy decoding until EOS or `max_len` (capped at 50) tokens.
    pub fn decode_greedy(&self, z: &EncoderOutput, max_len: usize) -> Result<Decoded> {
        Ok(self.decode_batch(&[z], max_len)?.remove(0))
    }

    pub fn decode_batch(&self, zs: &[&EncoderOutput], max_len: usize) -> Result<Vec<Decoded>> {
        let max_len = max_len.min(MAX_SENTENCE_LEN);
        let mut out = Vec::with_capacity(zs.len());
        for chunk in zs.chunks(INFERENCE_BATCH) {
            let mut g = Graph::new();
            let (memory, summary) = memory_from(&mut g, chunk)?;
            let dec = self.decoder.bind(&mut g, &self.store);
            out.extend(greedy_decode(&mut g, &dec, summary, &memory, max_len)?);
        }
        Ok(out)
    }

    /// Encodes and greedily decodes each sentence, returning target tokens and
    /// the decode record (with attention over source positions).
    pub fn translate_batch(&self, sentences: &[Sentence]) -> Result<Vec<(Sentence, Decoded)>> {
        let zs = self.encode_batch(sentences)?;
        let refs: Vec<&EncoderOutput> = zs.iter().collect();
        let decoded = self.decode_batch(&refs, MAX_SENTENCE_LEN)?;
        Ok(decoded.into_iter().map(|d| (self.tgt.decode(&d.ids), d)).collect())
    }

    pub fn translate(&self, tokens: &[String]) -> Result<Sentence> {
        Ok(self.translate_batch(std::slice::from_ref(&tokens.to_vec()))?.remove(0).0)
    }

    fn metadata(&self) -> serde_json::Value {
        json!({
            "kind": "mt",
            "direction": self.direction,
            "dims": self.dims,
            "src_vocab": self.src,
            "tgt_vocab": self.tgt,
            "src_vocab_hash": self.src.hash(),
            "tgt_vocab_hash": self.tgt.hash(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(checkpoint::encode(&self.store, &self.metadata())?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(path, &self.store, &self.metadata())?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (store, meta) = checkpoint::decode(bytes)?;
        Self::from_parts(store, meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, meta) = checkpoint::load(path)?;
        Self::from_parts(store, meta)
    }

    fn from_parts(store: ParamStore, meta: serde_json::Value) -> Result<Self> {
        fn parse<T: serde::de::DeserializeOwned>(name: &str, v: serde_json::Value) -> Result<T> {
            serde_json::from_value(v).map_err(|source| Error::Json {
                context: format!("checkpoint metadata `{name}`"),
                source,
            })
        }
        let field = |name: &str| {
            meta.get(name)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint metadata lacks `{name}`")))
        };
        if meta.get("kind").and_then(|k| k.as_str()) != Some("mt") {
            return Err(Error::InvalidArgument("checkpoint is not a translation model".into()));
        }
        let direction: Direction = parse("direction", field("direction")?)?;
        let dims: ModelDims = parse("dims", field("dims")?)?;
        let src: Vocabulary = parse("src_vocab", field("src_vocab")?)?;
        let tgt: Vocabulary = parse("tgt_vocab", field("tgt_vocab")?)?;
        for (name, vocab) in [("src_vocab_hash", &src), ("tgt_vocab_hash", &tgt)] {
            if field(name)?.as_str() != Some(vocab.hash().as_str()) {
                return Err(Error::VocabularyMismatch(format!("{name} does not match stored vocabulary")));
            }
        }
        let encoder = EncoderParams::find(&store, "enc", &dims)?;
        let decoder = DecoderParams::find(&store, "dec", &dims)?;
        Ok(Self {
            direction,
            src,
            tgt,
            dims,
            store,
            encoder,
            decoder,
        })
    }
}

/// One back-translated sentence: the pivot tokens, the e→f decode record and
/// the f→e encoding `z`.
#[derive(Clone, Debug)]
pub struct BackTranslation {
    pub pivot: Sentence,
    pub forward: Decoded,
    pub z: EncoderOutput,
}

/// `z = Encoder_fe(Decode_ef(x_e))`. Neither model is modified.
pub fn backtranslate_encode(x_e: &[String], mt_ef: &MTModel, mt_fe: &MTModel) -> Result<EncoderOutput> {
    Ok(backtranslate_batch(std::slice::from_ref(&x_e.to_vec()), mt_ef, mt_fe)?.remove(0).z)
}

pub fn backtranslate_batch(sentences: &[Sentence], mt_ef: &MTModel, mt_fe: &MTModel) -> Result<Vec<BackTranslation>> {
    if mt_ef.direction != Direction::EToF || mt_fe.direction != Direction::FToE {
        return Err(Error::InvalidArgument("back-translation needs an e->f and an f->e model".into()));
    }
    let forward = mt_ef
        .translate_batch(sentences)
        .map_err(|e| e.in_stage("translate e->f"))?;
    if let Some(i) = forward.iter().position(|(f, _)| f.is_empty()) {
        return Err(Error::InvalidArgument(format!("sentence {i} translated to an empty pivot sentence"))
            .in_stage("translate e->f"));
    }
    let pivots: Vec<Sentence> = forward.iter().map(|(f, _)| f.clone()).collect();
    let zs = mt_fe.encode_batch(&pivots).map_err(|e| e.in_stage("encode f->e"))?;
    Ok(forward
        .into_iter()
        .zip(zs)
        .map(|((pivot, forward), z)| BackTranslation { pivot, forward, z })
        .collect())
}
