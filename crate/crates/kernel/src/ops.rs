//! Composite operations built from graph primitives, plus tape-free helpers.

use crate::error::{shape_err, KernelError, Result};
use crate::graph::{softmax_rows, Graph, Var};
use crate::tensor::Tensor;

/// `softmax(logits / tau)` over the last axis, without recording a graph.
pub fn softmax_tau(logits: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(KernelError::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let cols = *logits.shape().last().unwrap_or(&1);
    let out = softmax_rows(logits.data(), cols, tau);
    let t = Tensor::new(logits.shape().to_vec(), out)?;
    Ok(t)
}

/// Graph nodes for one LSTM layer. Gate blocks are laid out `[i | f | g | o]`
/// along the columns of `w_ih: [in, 4H]`, `w_hh: [H, 4H]` and `bias: [1, 4H]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// One step of the LSTM recurrence on a batch: `x: [B, in]`, `h, c: [B, H]`.
pub fn lstm_cell(g: &mut Graph, x: Var, h_prev: Var, c_prev: Var, w: &LstmWeights) -> Result<(Var, Var)> {
    let (_, hidden4) = g.value(w.w_hh).dims2()?;
    let hidden = hidden4 / 4;
    if hidden4 % 4 != 0 || g.shape(h_prev)[1..] != [hidden] || g.shape(c_prev) != g.shape(h_prev) {
        return Err(shape_err(
            "lstm_cell",
            format!("w_hh {:?}, h {:?}, c {:?}", g.shape(w.w_hh), g.shape(h_prev), g.shape(c_prev)),
        ));
    }
    let xi = g.matmul(x, w.w_ih)?;
    let hh = g.matmul(h_prev, w.w_hh)?;
    let pre = g.add(xi, hh)?;
    let pre = g.add_bias(pre, w.bias)?;
    let i = g.slice_cols(pre, 0, hidden)?;
    let f = g.slice_cols(pre, hidden, hidden)?;
    let cand = g.slice_cols(pre, 2 * hidden, hidden)?;
    let o = g.slice_cols(pre, 3 * hidden, hidden)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let cand = g.tanh(cand)?;
    let o = g.sigmoid(o)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let squashed = g.tanh(c)?;
    let h = g.mul(o, squashed)?;
    Ok((h, c))
}
