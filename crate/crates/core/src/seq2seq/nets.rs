//! Batched encoder and attentional decoder, bound onto a graph per batch.
//!
//! The decoder here is shared by the translation models and the style
//! generators; only the memory it attends over differs.

use bst_kernel::{lstm_cell, Graph, LstmWeights, ParamId, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS, EOS, PAD};
use crate::error::{Error, Result};

pub(crate) const INIT_SCALE: f64 = 0.1;

/// Layer sizes of an encoder–decoder pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub embedding: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Width of the attentional hidden state fed to the output projection.
    pub attention: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            embedding: 300,
            hidden: 500,
            layers: 2,
            attention: 500,
        }
    }
}

impl ModelDims {
    pub fn desk() -> Self {
        Self {
            embedding: 32,
            hidden: 64,
            layers: 2,
            attention: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding == 0 || self.hidden == 0 || self.layers == 0 || self.attention == 0 {
            return Err(Error::InvalidArgument(format!("model dims must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LstmIds {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

impl LstmIds {
    fn create<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let w_ih = store.uniform(format!("{prefix}.w_ih"), &[input, 4 * hidden], INIT_SCALE, rng)?;
        let w_hh = store.uniform(format!("{prefix}.w_hh"), &[hidden, 4 * hidden], INIT_SCALE, rng)?;
        // Forget-gate bias starts at 1.
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        let bias = store.insert(format!("{prefix}.bias"), Tensor::matrix(1, 4 * hidden, b)?)?;
        Ok(Self { w_ih, w_hh, bias })
    }

    fn find(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            w_ih: store.id(&format!("{prefix}.w_ih"))?,
            w_hh: store.id(&format!("{prefix}.w_hh"))?,
            bias: store.id(&format!("{prefix}.bias"))?,
        })
    }

    fn bind(&self, g: &mut Graph, store: &ParamStore) -> LstmWeights {
        LstmWeights {
            w_ih: g.param(store, self.w_ih),
            w_hh: g.param(store, self.w_hh),
            bias: g.param(store, self.bias),
        }
    }
}

fn lengths_of(batch: &[Vec<usize>]) -> Result<Vec<usize>> {
    let lengths: Vec<usize> = batch.iter().map(Vec::len).collect();
    if batch.is_empty() || lengths.contains(&0) {
        return Err(Error::InvalidArgument("encoder batch needs nonempty sequences".into()));
    }
    Ok(lengths)
}

/// Runs `cell` over steps in the given order, freezing rows whose step is past
/// their length. Returns the per-step outputs (indexed by position) and the
/// final state.
fn run_direction(
    g: &mut Graph,
    inputs: &[Var],
    lengths: &[usize],
    w: &LstmWeights,
    hidden: usize,
    reverse: bool,
) -> Result<(Vec<Var>, Var)> {
    let b = lengths.len();
    let zeros = g.constant(Tensor::zeros(&[b, hidden]));
    let (mut h, mut c) = (zeros, zeros);
    let t_max = inputs.len();
    let mut out = vec![zeros; t_max];
    let order: Vec<usize> = if reverse { (0..t_max).rev().collect() } else { (0..t_max).collect() };
    for t in order {
        let (h2, c2) = lstm_cell(g, inputs[t], h, c, w)?;
        let mask: Vec<bool> = lengths.iter().map(|&l| t < l).collect();
        if mask.iter().all(|&m| m) {
            (h, c) = (h2, c2);
        } else {
            h = g.blend_rows(h2, h, &mask)?;
            c = g.blend_rows(c2, c, &mask)?;
        }
        out[t] = h;
    }
    Ok((out, h))
}

/// Stacked bidirectional LSTM over token embeddings.
#[derive(Clone, Debug)]
pub(crate) struct EncoderParams {
    emb: ParamId,
    layers: Vec<[LstmIds; 2]>,
    hidden: usize,
}

impl EncoderParams {
    pub(crate) fn create<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        vocab: usize,
        dims: &ModelDims,
        rng: &mut R,
    ) -> Result<Self> {
        let emb = store.uniform(format!("{prefix}.emb"), &[vocab, dims.embedding], INIT_SCALE, rng)?;
        let mut layers = Vec::with_capacity(dims.layers);
        for l in 0..dims.layers {
            let input = if l == 0 { dims.embedding } else { 2 * dims.hidden };
            layers.push([
                LstmIds::create(store, &format!("{prefix}.l{l}.fwd"), input, dims.hidden, rng)?,
                LstmIds::create(store, &format!("{prefix}.l{l}.bwd"), input, dims.hidden, rng)?,
            ]);
        }
        Ok(Self {
            emb,
            layers,
            hidden: dims.hidden,
        })
    }

    pub(crate) fn find(store: &ParamStore, prefix: &str, dims: &ModelDims) -> Result<Self> {
        let layers = (0..dims.layers)
            .map(|l| {
                Ok([
                    LstmIds::find(store, &format!("{prefix}.l{l}.fwd"))?,
                    LstmIds::find(store, &format!("{prefix}.l{l}.bwd"))?,
                ])
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            emb: store.id(&format!("{prefix}.emb"))?,
            layers,
            hidden: dims.hidden,
        })
    }

    /// Returns per-position states `[B, T, 2H]` of the top layer and the
    /// summary `[B, 2H]` (forward final state, backward final state).
    pub(crate) fn forward(&self, g: &mut Graph, store: &ParamStore, batch: &[Vec<usize>]) -> Result<(Var, Var)> {
        let lengths = lengths_of(batch)?;
        let t_max = *lengths.iter().max().expect("nonempty batch");
        let emb = g.param(store, self.emb);
        let mut inputs = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let ids: Vec<usize> = batch.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect();
            inputs.push(g.gather_rows(emb, &ids)?);
        }
        let mut summary = None;
        for layer in &self.layers {
            let fw = layer[0].bind(g, store);
            let bw = layer[1].bind(g, store);
            let (fwd, fwd_final) = run_direction(g, &inputs, &lengths, &fw, self.hidden, false)?;
            let (bwd, bwd_final) = run_direction(g, &inputs, &lengths, &bw, self.hidden, true)?;
            inputs = fwd
                .iter()
                .zip(&bwd)
                .map(|(&f, &b)| g.concat_cols(&[f, b]))
                .collect::<std::result::Result<_, _>>()?;
            summary = Some(g.concat_cols(&[fwd_final, bwd_final])?);
        }
        let states = g.stack_steps(&inputs)?;
        Ok((states, summary.expect("at least one layer")))
    }
}

/// What a decoder attends over: `states: [B, T, D]` with per-row lengths.
#[derive(Clone, Debug)]
pub(crate) struct Memory {
    pub states: Var,
    pub lengths: Vec<usize>,
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderParams {
    emb: ParamId,
    layers: Vec<LstmIds>,
    init: Vec<(ParamId, ParamId)>,
    att: ParamId,
    comb_w: ParamId,
    comb_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    pub(crate) dims: ModelDims,
}

impl DecoderParams {
    /// `memory_width` is the width of the attended states and of the summary
    /// used to initialise the recurrent state.
    pub(crate) fn create<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        vocab: usize,
        memory_width: usize,
        dims: &ModelDims,
        rng: &mut R,
    ) -> Result<Self> {
        let (e, h, a) = (dims.embedding, dims.hidden, dims.attention);
        let emb = store.uniform(format!("{prefix}.emb"), &[vocab, e], INIT_SCALE, rng)?;
        let mut layers = Vec::with_capacity(dims.layers);
        let mut init = Vec::with_capacity(dims.layers);
        for l in 0..dims.layers {
            let input = if l == 0 { e + a } else { h };
            layers.push(LstmIds::create(store, &format!("{prefix}.l{l}"), input, h, rng)?);
            init.push((
                store.uniform(format!("{prefix}.init{l}.w"), &[memory_width, h], INIT_SCALE, rng)?,
                store.zeros(format!("{prefix}.init{l}.b"), &[1, h])?,
            ));
        }
        Ok(Self {
            emb,
            layers,
            init,
            att: store.uniform(format!("{prefix}.att.w"), &[h, memory_width], INIT_SCALE, rng)?,
            comb_w: store.uniform(format!("{prefix}.comb.w"), &[memory_width + h, a], INIT_SCALE, rng)?,
            comb_b: store.zeros(format!("{prefix}.comb.b"), &[1, a])?,
            out_w: store.uniform(format!("{prefix}.out.w"), &[a, vocab], INIT_SCALE, rng)?,
            out_b: store.zeros(format!("{prefix}.out.b"), &[1, vocab])?,
            dims: dims.clone(),
        })
    }

    pub(crate) fn find(store: &ParamStore, prefix: &str, dims: &ModelDims) -> Result<Self> {
        let mut layers = Vec::with_capacity(dims.layers);
        let mut init = Vec::with_capacity(dims.layers);
        for l in 0..dims.layers {
            layers.push(LstmIds::find(store, &format!("{prefix}.l{l}"))?);
            init.push((store.id(&format!("{prefix}.init{l}.w"))?, store.id(&format!("{prefix}.init{l}.b"))?));
        }
        Ok(Self {
            emb: store.id(&format!("{prefix}.emb"))?,
            layers,
            init,
            att: store.id(&format!("{prefix}.att.w"))?,
            comb_w: store.id(&format!("{prefix}.comb.w"))?,
            comb_b: store.id(&format!("{prefix}.comb.b"))?,
            out_w: store.id(&format!("{prefix}.out.w"))?,
            out_b: store.id(&format!("{prefix}.out.b"))?,
            dims: dims.clone(),
        })
    }

    #[cfg(test)]
    pub(crate) fn out_bias(&self) -> ParamId {
        self.out_b
    }

    pub(crate) fn bind(&self, g: &mut Graph, store: &ParamStore) -> BoundDecoder {
        BoundDecoder {
            emb: g.param(store, self.emb),
            layers: self.layers.iter().map(|l| l.bind(g, store)).collect(),
            init: self.init.iter().map(|&(w, b)| (g.param(store, w), g.param(store, b))).collect(),
            att: g.param(store, self.att),
            comb_w: g.param(store, self.comb_w),
            comb_b: g.param(store, self.comb_b),
            out_w: g.param(store, self.out_w),
            out_b: g.param(store, self.out_b),
            dims: self.dims.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct DecState {
    h: Vec<Var>,
    c: Vec<Var>,
    feed: Var,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct StepOut {
    pub logits: Var,
    pub attention: Var,
}

pub(crate) struct BoundDecoder {
    emb: Var,
    layers: Vec<LstmWeights>,
    init: Vec<(Var, Var)>,
    att: Var,
    comb_w: Var,
    comb_b: Var,
    out_w: Var,
    out_b: Var,
    dims: ModelDims,
}

impl BoundDecoder {
    /// Hidden states start from an affine map of the summary; cells and the
    /// attentional feed start at zero.
    pub(crate) fn start(&self, g: &mut Graph, summary: Var) -> Result<DecState> {
        let b = g.shape(summary)[0];
        let zeros_h = g.constant(Tensor::zeros(&[b, self.dims.hidden]));
        let mut h = Vec::with_capacity(self.init.len());
        for &(w, bias) in &self.init {
            let pre = g.affine(summary, w, bias)?;
            h.push(g.tanh(pre)?);
        }
        Ok(DecState {
            c: vec![zeros_h; h.len()],
            h,
            feed: g.constant(Tensor::zeros(&[b, self.dims.attention])),
        })
    }

    pub(crate) fn embed_ids(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        Ok(g.gather_rows(self.emb, ids)?)
    }

    /// Expected embedding of a distribution over the vocabulary.
    pub(crate) fn embed_soft(&self, g: &mut Graph, probs: Var) -> Result<Var> {
        Ok(g.matmul(probs, self.emb)?)
    }

    pub(crate) fn step(&self, g: &mut Graph, state: &DecState, input: Var, memory: &Memory) -> Result<(DecState, StepOut)> {
        let mut x = g.concat_cols(&[input, state.feed])?;
        let mut h = Vec::with_capacity(self.layers.len());
        let mut c = Vec::with_capacity(self.layers.len());
        for (l, w) in self.layers.iter().enumerate() {
            let (hl, cl) = lstm_cell(g, x, state.h[l], state.c[l], w)?;
            h.push(hl);
            c.push(cl);
            x = hl;
        }
        let query = g.matmul(x, self.att)?;
        let scores = g.attn_scores(memory.states, query, &memory.lengths)?;
        let attention = g.softmax_tau(scores, 1.0)?;
        let context = g.attn_context(attention, memory.states)?;
        let joined = g.concat_cols(&[context, x])?;
        let pre = g.affine(joined, self.comb_w, self.comb_b)?;
        let feed = g.tanh(pre)?;
        let logits = g.affine(feed, self.out_w, self.out_b)?;
        Ok((DecState { h, c, feed }, StepOut { logits, attention }))
    }
}

/// Mean token negative log-likelihood of `targets` (each followed by EOS)
/// under teacher forcing. Also returns how many target positions the argmax
/// prediction got right, and how many there were.
pub(crate) fn teacher_forced_nll(
    g: &mut Graph,
    dec: &BoundDecoder,
    summary: Var,
    memory: &Memory,
    targets: &[Vec<usize>],
) -> Result<(Var, usize, usize)> {
    let steps = targets.iter().map(Vec::len).max().unwrap_or(0) + 1;
    let total: usize = targets.iter().map(|t| t.len() + 1).sum();
    let w = 1.0 / total as f64;
    let mut state = dec.start(g, summary)?;
    let mut prev: Vec<usize> = vec![BOS; targets.len()];
    let mut loss: Option<Var> = None;
    let mut correct = 0;
    for t in 0..steps {
        let input = dec.embed_ids(g, &prev)?;
        let (next, out) = dec.step(g, &state, input, memory)?;
        state = next;
        let mut gold = Vec::with_capacity(targets.len());
        let mut weights = Vec::with_capacity(targets.len());
        for tgt in targets {
            let (id, wt) = match t.cmp(&tgt.len()) {
                std::cmp::Ordering::Less => (tgt[t], w),
                std::cmp::Ordering::Equal => (EOS, w),
                std::cmp::Ordering::Greater => (PAD, 0.0),
            };
            gold.push(id);
            weights.push(wt);
        }
        let pred = g.value(out.logits).argmax_rows();
        correct += pred.iter().zip(&gold).zip(&weights).filter(|((p, t), &wt)| wt > 0.0 && p == t).count();
        let term = g.cross_entropy(out.logits, &gold, &weights)?;
        loss = Some(match loss {
            Some(l) => g.add(l, term)?,
            None => term,
        });
        prev = targets.iter().map(|tgt| tgt.get(t).copied().unwrap_or(PAD)).collect();
    }
    Ok((loss.expect("at least one step"), correct, total))
}

/// A greedy decode result: emitted ids (EOS excluded) and, per emitted token,
/// the attention distribution over the valid memory positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub ids: Vec<usize>,
    pub attention: Vec<Vec<f64>>,
}

pub(crate) fn greedy_decode(
    g: &mut Graph,
    dec: &BoundDecoder,
    summary: Var,
    memory: &Memory,
    max_len: usize,
) -> Result<Vec<Decoded>> {
    let b = memory.lengths.len();
    let mut out = vec![
        Decoded {
            ids: Vec::new(),
            attention: Vec::new(),
        };
        b
    ];
    let mut done = vec![false; b];
    let mut state = dec.start(g, summary)?;
    let mut prev = vec![BOS; b];
    for _ in 0..max_len {
        let input = dec.embed_ids(g, &prev)?;
        let (next, step) = dec.step(g, &state, input, memory)?;
        state = next;
        let pred = g.value(step.logits).argmax_rows();
        let att = g.value(step.attention);
        let t = att.shape()[1];
        for r in 0..b {
            if done[r] {
                continue;
            }
            if pred[r] == EOS {
                done[r] = true;
                continue;
            }
            out[r].ids.push(pred[r]);
            out[r].attention.push(att.data()[r * t..r * t + memory.lengths[r]].to_vec());
        }
        if done.iter().all(|&d| d) {
            break;
        }
        prev = pred;
    }
    Ok(out)
}

/// Pads per-sentence states into one `[B, T, D]` constant plus a `[B, D]`
/// summary constant.
pub(crate) fn memory_from(g: &mut Graph, outputs: &[&EncoderOutput]) -> Result<(Memory, Var)> {
    let Some(first) = outputs.first() else {
        return Err(Error::InvalidArgument("empty memory batch".into()));
    };
    let d = first.width();
    let lengths: Vec<usize> = outputs.iter().map(|o| o.len()).collect();
    let t_max = *lengths.iter().max().expect("nonempty");
    let mut states = vec![0.0; outputs.len() * t_max * d];
    let mut summary = Vec::with_capacity(outputs.len() * d);
    for (b, o) in outputs.iter().enumerate() {
        if o.width() != d {
            return Err(Error::InvalidArgument(format!("memory widths {} and {d} differ", o.width())));
        }
        states[b * t_max * d..b * t_max * d + o.len() * d].copy_from_slice(o.states.data());
        summary.extend_from_slice(o.summary.data());
    }
    let states = g.constant(Tensor::new(vec![outputs.len(), t_max, d], states)?);
    let summary = g.constant(Tensor::matrix(outputs.len(), d, summary)?);
    Ok((Memory { states, lengths }, summary))
}

/// Splits batched encoder nodes back into per-sentence outputs.
pub(crate) fn split_outputs(g: &Graph, states: Var, summary: Var, lengths: &[usize]) -> Result<Vec<EncoderOutput>> {
    let (b, t, d) = g.value(states).dims3()?;
    let s = g.value(states).data();
    let z = g.value(summary).data();
    (0..b)
        .map(|r| {
            let len = lengths[r];
            Ok(EncoderOutput {
                states: Tensor::matrix(len, d, s[r * t * d..(r * t + len) * d].to_vec())?,
                summary: Tensor::matrix(1, d, z[r * d..(r + 1) * d].to_vec())?,
            })
        })
        .collect()
}

/// Per-position encoder states `[T, 2H]` and the final-state summary `[1, 2H]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub states: Tensor,
    pub summary: Tensor,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.states.shape()[1]
    }
}
