use std::collections::HashMap;

use crate::error::{shape_err, KernelError, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Score assigned to masked-out attention positions. Finite so that every
/// tensor stays finite; `exp` of it underflows to exactly zero.
pub const MASKED_SCORE: f64 = -1.0e30;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxTau(Var, f64),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    Sum(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    StackSteps(Vec<Var>),
    AttnScores {
        states: Var,
        query: Var,
        lengths: Vec<usize>,
    },
    AttnContext {
        weights: Var,
        states: Var,
    },
    Conv1dMaxPool {
        input: Var,
        filters: Var,
        bias: Var,
        width: usize,
        lengths: Vec<usize>,
        argmax: Vec<usize>,
    },
    BlendRows {
        new: Var,
        old: Var,
        mask: Vec<bool>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Define-by-run computation graph. Values are computed eagerly as nodes are
/// appended, so node order is a topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// `C = op(A)·op(B)` with optional transposes, accumulating `beta·C`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: slice lengths match the logical dimensions and strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-wise `softmax(x / tau)` with max subtraction.
pub(crate) fn softmax_rows(data: &[f64], cols: usize, tau: f64) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (row, dst) in data.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &x) in dst.iter_mut().zip(row) {
            *d = ((x - max) / tau).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    out
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => {
            for (a, b) in d.iter_mut().zip(src) {
                *a += b;
            }
        }
        None => *dst = Some(src.to_vec()),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(KernelError::NonFinite(name));
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf bound to a trainable parameter. Repeated calls for the same id
    /// return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: store.get(id).clone(),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out), "matmul")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(op, Tensor::from_parts(shape, data), name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// `[m, n] + [1, n]`, broadcasting the bias row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.shape(bias) != [1, n] {
            return Err(shape_err("add_bias", format!("[{m},{n}] + {:?}", self.shape(bias))));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (r, bb) in row.iter_mut().zip(b) {
                *r += bb;
            }
        }
        self.push(Op::AddBias(x, bias), Tensor::from_parts(vec![m, n], data), "add_bias")
    }

    /// `x·w + b` for `x: [m, k]`, `w: [k, n]`, `b: [1, n]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Scale(a, s), Tensor::from_parts(shape, data), "scale")
    }

    fn map(&mut self, a: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(op, Tensor::from_parts(shape, data), name)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a), "sigmoid", |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), "tanh", f64::tanh)
    }

    /// Row-wise `softmax(x / tau)` over the last axis of a rank-2 tensor.
    pub fn softmax_tau(&mut self, x: Var, tau: f64) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(KernelError::InvalidArgument(format!("temperature must be positive, got {tau}")));
        }
        let (m, n) = self.value(x).dims2()?;
        let out = softmax_rows(self.value(x).data(), n, tau);
        self.push(Op::SoftmaxTau(x, tau), Tensor::from_parts(vec![m, n], out), "softmax_tau")
    }

    /// `Σ_i w_i · (−log softmax(logits_i)[t_i])` as a scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let (m, n) = self.value(logits).dims2()?;
        if targets.len() != m || weights.len() != m {
            return Err(shape_err(
                "cross_entropy",
                format!("{m} rows, {} targets, {} weights", targets.len(), weights.len()),
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= n) {
            return Err(KernelError::InvalidArgument(format!("target {t} out of range for {n} classes")));
        }
        let data = self.value(logits).data();
        let mut loss = 0.0;
        for ((row, &t), &w) in data.chunks(n).zip(targets).zip(weights) {
            if w != 0.0 {
                loss += w * (log_sum_exp(row) - row[t]);
            }
        }
        let probs = softmax_rows(data, n, 1.0);
        self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            "cross_entropy",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), "sum")
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(KernelError::InvalidArgument("concat of zero tensors".into()));
        };
        let (m, _) = self.value(first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != m {
                return Err(shape_err("concat_cols", format!("row counts {m} and {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), Tensor::from_parts(vec![m, total], data), "concat_cols")
    }

    /// Columns `start..start + len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if len == 0 || start + len > n {
            return Err(shape_err("slice_cols", format!("columns {start}..{} of {n}", start + len)));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        self.push(Op::SliceCols(a, start), Tensor::from_parts(vec![m, len], data), "slice_cols")
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.value(table).dims2()?;
        if ids.is_empty() {
            return Err(KernelError::InvalidArgument("gather of zero rows".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(KernelError::InvalidArgument(format!("row {bad} out of range for table of {v}")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        self.push(Op::GatherRows(table, ids.to_vec()), Tensor::from_parts(vec![ids.len(), d], data), "gather_rows")
    }

    /// Stacks `T` tensors of shape `[B, D]` into `[B, T, D]`.
    pub fn stack_steps(&mut self, steps: &[Var]) -> Result<Var> {
        let Some(&first) = steps.first() else {
            return Err(KernelError::InvalidArgument("stack of zero steps".into()));
        };
        let (b, d) = self.value(first).dims2()?;
        for &s in steps {
            if self.shape(s) != [b, d] {
                return Err(shape_err("stack_steps", format!("[{b},{d}] vs {:?}", self.shape(s))));
            }
        }
        let t = steps.len();
        let mut data = vec![0.0; b * t * d];
        for (ti, &s) in steps.iter().enumerate() {
            let src = self.value(s).data();
            for bi in 0..b {
                data[(bi * t + ti) * d..(bi * t + ti + 1) * d].copy_from_slice(&src[bi * d..(bi + 1) * d]);
            }
        }
        self.push(Op::StackSteps(steps.to_vec()), Tensor::from_parts(vec![b, t, d], data), "stack_steps")
    }

    /// Dot-product scores `s[b,t] = <states[b,t,:], query[b,:]>`; positions
    /// `t >= lengths[b]` get [`MASKED_SCORE`].
    pub fn attn_scores(&mut self, states: Var, query: Var, lengths: &[usize]) -> Result<Var> {
        let (b, t, d) = self.value(states).dims3()?;
        if self.shape(query) != [b, d] || lengths.len() != b {
            return Err(shape_err(
                "attn_scores",
                format!("states [{b},{t},{d}], query {:?}, {} lengths", self.shape(query), lengths.len()),
            ));
        }
        if let Some(&l) = lengths.iter().find(|&&l| l == 0 || l > t) {
            return Err(KernelError::InvalidArgument(format!("length {l} outside 1..={t}")));
        }
        let h = self.value(states).data();
        let q = self.value(query).data();
        let mut data = vec![MASKED_SCORE; b * t];
        for bi in 0..b {
            let qb = &q[bi * d..(bi + 1) * d];
            for ti in 0..lengths[bi] {
                let hs = &h[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                data[bi * t + ti] = hs.iter().zip(qb).map(|(x, y)| x * y).sum();
            }
        }
        self.push(
            Op::AttnScores {
                states,
                query,
                lengths: lengths.to_vec(),
            },
            Tensor::from_parts(vec![b, t], data),
            "attn_scores",
        )
    }

    /// Context vectors `c[b,:] = Σ_t weights[b,t]·states[b,t,:]`.
    pub fn attn_context(&mut self, weights: Var, states: Var) -> Result<Var> {
        let (b, t, d) = self.value(states).dims3()?;
        if self.shape(weights) != [b, t] {
            return Err(shape_err("attn_context", format!("weights {:?} vs states [{b},{t},{d}]", self.shape(weights))));
        }
        let h = self.value(states).data();
        let a = self.value(weights).data();
        let mut data = vec![0.0; b * d];
        for bi in 0..b {
            let out = &mut data[bi * d..(bi + 1) * d];
            for ti in 0..t {
                let w = a[bi * t + ti];
                if w == 0.0 {
                    continue;
                }
                let hs = &h[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                for (o, x) in out.iter_mut().zip(hs) {
                    *o += w * x;
                }
            }
        }
        self.push(Op::AttnContext { weights, states }, Tensor::from_parts(vec![b, d], data), "attn_context")
    }

    /// Width-`width` convolution over time followed by max-pooling.
    ///
    /// `input: [B, T, D]`, `filters: [K, width·D]` (window-major), `bias: [1, K]`.
    /// Row `b` has `lengths[b]` valid steps; steps past that are treated as
    /// zeros, and rows shorter than `width` are zero-padded up to `width`.
    /// Output is `[B, K]`.
    pub fn conv1d_maxpool(&mut self, input: Var, filters: Var, bias: Var, width: usize, lengths: &[usize]) -> Result<Var> {
        let (b, t, d) = self.value(input).dims3()?;
        let (k, wd) = self.value(filters).dims2()?;
        if width == 0 || wd != width * d || self.shape(bias) != [1, k] || lengths.len() != b {
            return Err(shape_err(
                "conv1d_maxpool",
                format!(
                    "input [{b},{t},{d}], filters [{k},{wd}], width {width}, bias {:?}, {} lengths",
                    self.shape(bias),
                    lengths.len()
                ),
            ));
        }
        if let Some(&l) = lengths.iter().find(|&&l| l == 0 || l > t) {
            return Err(KernelError::InvalidArgument(format!("length {l} outside 1..={t}")));
        }
        let x = self.value(input).data();
        let f = self.value(filters).data();
        let bv = self.value(bias).data();
        let mut out = vec![0.0; b * k];
        let mut argmax = vec![0; b * k];
        let mut window = vec![0.0; wd];
        for bi in 0..b {
            let len = lengths[bi];
            let positions = len.max(width) - width + 1;
            let mut best = vec![f64::NEG_INFINITY; k];
            for p in 0..positions {
                for w in 0..width {
                    let dst = &mut window[w * d..(w + 1) * d];
                    if p + w < len {
                        dst.copy_from_slice(&x[(bi * t + p + w) * d..(bi * t + p + w + 1) * d]);
                    } else {
                        dst.fill(0.0);
                    }
                }
                for ki in 0..k {
                    let fk = &f[ki * wd..(ki + 1) * wd];
                    let r = bv[ki] + fk.iter().zip(&window).map(|(a, c)| a * c).sum::<f64>();
                    if r > best[ki] {
                        best[ki] = r;
                        argmax[bi * k + ki] = p;
                    }
                }
            }
            out[bi * k..(bi + 1) * k].copy_from_slice(&best);
        }
        self.push(
            Op::Conv1dMaxPool {
                input,
                filters,
                bias,
                width,
                lengths: lengths.to_vec(),
                argmax,
            },
            Tensor::from_parts(vec![b, k], out),
            "conv1d_maxpool",
        )
    }

    /// Row `r` of the output is row `r` of `new` where `mask[r]`, else of `old`.
    pub fn blend_rows(&mut self, new: Var, old: Var, mask: &[bool]) -> Result<Var> {
        self.same_shape("blend_rows", new, old)?;
        let (m, n) = self.value(new).dims2()?;
        if mask.len() != m {
            return Err(shape_err("blend_rows", format!("{} mask entries for {m} rows", mask.len())));
        }
        let mut data = self.value(old).data().to_vec();
        let src = self.value(new).data();
        for (r, &keep) in mask.iter().enumerate() {
            if keep {
                data[r * n..(r + 1) * n].copy_from_slice(&src[r * n..(r + 1) * n]);
            }
        }
        self.push(
            Op::BlendRows {
                new,
                old,
                mask: mask.to_vec(),
            },
            Tensor::from_parts(vec![m, n], data),
            "blend_rows",
        )
    }

    /// Reverse-mode sweep from a scalar `loss`, returning the gradient of every
    /// parameter leaf reachable in the graph.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(KernelError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = node.value.data();
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, &g, node.value.shape()),
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2()?;
                    let (_, n) = self.value(*b).dims2()?;
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, &g, false, self.value(*b).data(), true, &mut da, 0.0);
                    add_into(&mut grads[a.0], &da);
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, &g, false, &mut db, 0.0);
                    add_into(&mut grads[b.0], &db);
                }
                Op::Add(a, b) => {
                    add_into(&mut grads[a.0], &g);
                    add_into(&mut grads[b.0], &g);
                }
                Op::AddBias(x, bias) => {
                    add_into(&mut grads[x.0], &g);
                    let n = self.value(*bias).numel();
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (d, r) in db.iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    add_into(&mut grads[bias.0], &db);
                }
                Op::Sub(a, b) => {
                    add_into(&mut grads[a.0], &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    add_into(&mut grads[b.0], &neg);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let da: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    let db: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    add_into(&mut grads[a.0], &da);
                    add_into(&mut grads[b.0], &db);
                }
                Op::Scale(a, s) => {
                    let da: Vec<f64> = g.iter().map(|x| x * s).collect();
                    add_into(&mut grads[a.0], &da);
                }
                Op::Sigmoid(a) => {
                    let da: Vec<f64> = g.iter().zip(y).map(|(gg, yy)| gg * yy * (1.0 - yy)).collect();
                    add_into(&mut grads[a.0], &da);
                }
                Op::Tanh(a) => {
                    let da: Vec<f64> = g.iter().zip(y).map(|(gg, yy)| gg * (1.0 - yy * yy)).collect();
                    add_into(&mut grads[a.0], &da);
                }
                Op::SoftmaxTau(x, tau) => {
                    let n = *node.value.shape().last().unwrap_or(&1);
                    let mut dx = vec![0.0; g.len()];
                    for ((gr, yr), dr) in g.chunks(n).zip(y.chunks(n)).zip(dx.chunks_mut(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((d, gg), yy) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = yy * (gg - dot) / tau;
                        }
                    }
                    add_into(&mut grads[x.0], &dx);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let n = self.value(*logits).dims2()?.1;
                    let mut dx = vec![0.0; probs.len()];
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let scale = g[0] * w;
                        for j in 0..n {
                            dx[r * n + j] = scale * probs[r * n + j];
                        }
                        dx[r * n + t] -= scale;
                    }
                    add_into(&mut grads[logits.0], &dx);
                }
                Op::Sum(a) => {
                    let da = vec![g[0]; self.value(*a).numel()];
                    add_into(&mut grads[a.0], &da);
                }
                Op::ConcatCols(parts) => {
                    let (m, total) = node.value.dims2()?;
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).dims2()?.1;
                        let mut dp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        add_into(&mut grads[p.0], &dp);
                        offset += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (m, n) = self.value(*a).dims2()?;
                    let len = node.value.dims2()?.1;
                    let mut da = vec![0.0; m * n];
                    for r in 0..m {
                        da[r * n + start..r * n + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    add_into(&mut grads[a.0], &da);
                }
                Op::GatherRows(table, ids) => {
                    let (v, d) = self.value(*table).dims2()?;
                    let mut dt = vec![0.0; v * d];
                    for (r, &i) in ids.iter().enumerate() {
                        for (a, b) in dt[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *a += b;
                        }
                    }
                    add_into(&mut grads[table.0], &dt);
                }
                Op::StackSteps(steps) => {
                    let (b, t, d) = node.value.dims3()?;
                    for (ti, s) in steps.iter().enumerate() {
                        let mut ds = Vec::with_capacity(b * d);
                        for bi in 0..b {
                            ds.extend_from_slice(&g[(bi * t + ti) * d..(bi * t + ti + 1) * d]);
                        }
                        add_into(&mut grads[s.0], &ds);
                    }
                }
                Op::AttnScores { states, query, lengths } => {
                    let (b, t, d) = self.value(*states).dims3()?;
                    let h = self.value(*states).data();
                    let q = self.value(*query).data();
                    let mut dh = vec![0.0; b * t * d];
                    let mut dq = vec![0.0; b * d];
                    for bi in 0..b {
                        for ti in 0..lengths[bi] {
                            let gs = g[bi * t + ti];
                            let base = (bi * t + ti) * d;
                            for di in 0..d {
                                dh[base + di] += gs * q[bi * d + di];
                                dq[bi * d + di] += gs * h[base + di];
                            }
                        }
                    }
                    add_into(&mut grads[states.0], &dh);
                    add_into(&mut grads[query.0], &dq);
                }
                Op::AttnContext { weights, states } => {
                    let (b, t, d) = self.value(*states).dims3()?;
                    let h = self.value(*states).data();
                    let a = self.value(*weights).data();
                    let mut da = vec![0.0; b * t];
                    let mut dh = vec![0.0; b * t * d];
                    for bi in 0..b {
                        let gb = &g[bi * d..(bi + 1) * d];
                        for ti in 0..t {
                            let base = (bi * t + ti) * d;
                            let w = a[bi * t + ti];
                            let mut acc = 0.0;
                            for di in 0..d {
                                acc += gb[di] * h[base + di];
                                dh[base + di] += w * gb[di];
                            }
                            da[bi * t + ti] = acc;
                        }
                    }
                    add_into(&mut grads[weights.0], &da);
                    add_into(&mut grads[states.0], &dh);
                }
                Op::Conv1dMaxPool {
                    input,
                    filters,
                    bias,
                    width,
                    lengths,
                    argmax,
                } => {
                    let (b, t, d) = self.value(*input).dims3()?;
                    let (k, wd) = self.value(*filters).dims2()?;
                    let x = self.value(*input).data();
                    let f = self.value(*filters).data();
                    let mut dx = vec![0.0; b * t * d];
                    let mut df = vec![0.0; k * wd];
                    let mut db = vec![0.0; k];
                    for bi in 0..b {
                        for ki in 0..k {
                            let gk = g[bi * k + ki];
                            if gk == 0.0 {
                                continue;
                            }
                            db[ki] += gk;
                            let p = argmax[bi * k + ki];
                            for w in 0..*width {
                                if p + w >= lengths[bi] {
                                    break;
                                }
                                let xo = (bi * t + p + w) * d;
                                let fo = ki * wd + w * d;
                                for di in 0..d {
                                    df[fo + di] += gk * x[xo + di];
                                    dx[xo + di] += gk * f[fo + di];
                                }
                            }
                        }
                    }
                    add_into(&mut grads[input.0], &dx);
                    add_into(&mut grads[filters.0], &df);
                    add_into(&mut grads[bias.0], &db);
                }
                Op::BlendRows { new, old, mask } => {
                    let n = node.value.dims2()?.1;
                    let mut dn = vec![0.0; g.len()];
                    let mut dold = vec![0.0; g.len()];
                    for (r, &keep) in mask.iter().enumerate() {
                        let dst = if keep { &mut dn } else { &mut dold };
                        dst[r * n..(r + 1) * n].copy_from_slice(&g[r * n..(r + 1) * n]);
                    }
                    add_into(&mut grads[new.0], &dn);
                    add_into(&mut grads[old.0], &dold);
                }
            }
        }
        Ok(out)
    }
}
