use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Forward-pass mode. Train mode records dropout masks and uses batch
/// statistics in batchnorm; eval mode is deterministic and dropout-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

/// Per-channel running mean/variance for batch normalization.
///
/// Lives outside the graph: forward passes in train mode update it in
/// place, eval passes read it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Saved state for the batchnorm backward rule.
#[derive(Debug)]
pub(crate) struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub batch: usize,
    pub channels: usize,
    pub time: usize,
    pub train: bool,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Sum { x: Var },
    Matmul { a: Var, b: Var },
    Linear { x: Var, w: Var, bias: Option<Var> },
    Matvec { m: Var, v: Var },
    Vecmat { v: Var, m: Var },
    ConvTime { x: Var, kernels: Var, bias: Option<Var>, stride: usize },
    MaxPoolTime { x: Var, argmax: Vec<usize> },
    BatchNorm { x: Var, gamma: Var, beta: Var, cache: Box<BnCache> },
    Unary { kind: Activation, x: Var },
    SoftmaxVec { x: Var, mask: Option<Vec<bool>> },
    Dropout { x: Var, scale: f64, mask: Vec<bool> },
    Concat { a: Var, b: Var },
    Slice0 { x: Var, from: usize },
    Reshape { x: Var },
    StackRows { rows: Vec<Var> },
    Embed { table: Var, ids: Vec<u32>, pad_id: u32 },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor, weights: Option<Vec<f64>> },
}

struct Node {
    value: Tensor,
    needs_grad: bool,
}

/// Tape of executed operations.
///
/// Operations are recorded in execution order, which is a topological
/// order by construction; [`Graph::backward`] replays them in exact
/// reverse, summing each node's gradient over all of its consumers.
pub struct Graph {
    nodes: Vec<Node>,
    ops: Vec<Op>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    /// Registers an input tensor. Gradients are accumulated for it only
    /// when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            needs_grad: requires_grad,
        });
        self.ops.push(Op::Leaf);
        self.grads.push(None);
        Var(id)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` call w.r.t. `v`, if one was produced.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Appends an op node after verifying its output is finite.
    pub(crate) fn push(&mut self, name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if self.backward_done {
            return Err(Error::Backward(format!(
                "graph already ran backward; cannot record {name}"
            )));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let id = self.nodes.len();
        self.nodes.push(Node { value, needs_grad });
        self.ops.push(op);
        self.grads.push(None);
        Ok(Var(id))
    }

    fn accumulate(&mut self, v: Var, delta_fn: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        if self.grads[v.0].is_none() {
            self.grads[v.0] = Some(Tensor::zeros(self.nodes[v.0].value.shape()));
        }
        delta_fn(self.grads[v.0].as_mut().unwrap().data_mut());
    }

    /// Propagates gradients from a scalar loss to every leaf registered
    /// with `requires_grad`. May be called once per graph; a second call
    /// is an error rather than silent re-accumulation.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward(
                "backward already ran on this graph".into(),
            ));
        }
        let loss_shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {loss_shape:?}"
            )));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(Tensor::new(loss_shape, vec![1.0])?);

        for id in (0..=loss.0).rev() {
            if self.grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let g = self.grads[id].take().unwrap();
            self.backprop_op(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn backprop_op(&mut self, id: usize, g: &Tensor) {
        // Ops are moved out and restored so inputs can be borrowed freely.
        let op = std::mem::replace(&mut self.ops[id], Op::Leaf);
        match &op {
            Op::Leaf => {}

            Op::Add { a, b } => {
                self.accumulate(*a, |da| add_assign(da, g.data(), 1.0));
                self.accumulate(*b, |db| add_assign(db, g.data(), 1.0));
            }

            Op::Sub { a, b } => {
                self.accumulate(*a, |da| add_assign(da, g.data(), 1.0));
                self.accumulate(*b, |db| add_assign(db, g.data(), -1.0));
            }

            Op::Mul { a, b } => {
                let (av, bv) = (self.nodes[a.0].value.data().to_vec(), self.nodes[b.0].value.data().to_vec());
                self.accumulate(*a, |da| {
                    for i in 0..da.len() {
                        da[i] += g.data()[i] * bv[i];
                    }
                });
                self.accumulate(*b, |db| {
                    for i in 0..db.len() {
                        db[i] += g.data()[i] * av[i];
                    }
                });
            }

            Op::Scale { x, c } => {
                let c = *c;
                self.accumulate(*x, |dx| add_assign(dx, g.data(), c));
            }

            Op::Sum { x } => {
                let go = g.item();
                self.accumulate(*x, |dx| {
                    for d in dx.iter_mut() {
                        *d += go;
                    }
                });
            }

            Op::Matmul { a, b } => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                // da = g . b^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g.data()[i * n + j];
                        for p in 0..k {
                            da[i * k + p] += gij * bv.data()[p * n + j];
                        }
                    }
                }
                // db = a^T . g
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = av.data()[i * k + p];
                        for j in 0..n {
                            db[p * n + j] += aip * g.data()[i * n + j];
                        }
                    }
                }
                self.accumulate(*a, |d| add_assign(d, &da, 1.0));
                self.accumulate(*b, |d| add_assign(d, &db, 1.0));
            }

            Op::Linear { x, w, bias } => {
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                let (m_out, d_in) = (wv.shape()[0], wv.shape()[1]);
                let rows = if xv.rank() == 1 { 1 } else { xv.shape()[0] };
                // dx = g . w
                let mut dx = vec![0.0; rows * d_in];
                for r in 0..rows {
                    for o in 0..m_out {
                        let go = g.data()[r * m_out + o];
                        for j in 0..d_in {
                            dx[r * d_in + j] += go * wv.data()[o * d_in + j];
                        }
                    }
                }
                // dw = g^T . x
                let mut dw = vec![0.0; m_out * d_in];
                for r in 0..rows {
                    for o in 0..m_out {
                        let go = g.data()[r * m_out + o];
                        for j in 0..d_in {
                            dw[o * d_in + j] += go * xv.data()[r * d_in + j];
                        }
                    }
                }
                self.accumulate(*x, |d| add_assign(d, &dx, 1.0));
                self.accumulate(*w, |d| add_assign(d, &dw, 1.0));
                if let Some(bias) = bias {
                    let mut db = vec![0.0; m_out];
                    for r in 0..rows {
                        for o in 0..m_out {
                            db[o] += g.data()[r * m_out + o];
                        }
                    }
                    self.accumulate(*bias, |d| add_assign(d, &db, 1.0));
                }
            }

            Op::Matvec { m, v } => {
                let mv = &self.nodes[m.0].value;
                let vv = self.nodes[v.0].value.data().to_vec();
                let (rows, cols) = (mv.shape()[0], mv.shape()[1]);
                let mut dm = vec![0.0; rows * cols];
                let mut dv = vec![0.0; cols];
                for i in 0..rows {
                    let gi = g.data()[i];
                    for j in 0..cols {
                        dm[i * cols + j] += gi * vv[j];
                        dv[j] += gi * mv.data()[i * cols + j];
                    }
                }
                self.accumulate(*m, |d| add_assign(d, &dm, 1.0));
                self.accumulate(*v, |d| add_assign(d, &dv, 1.0));
            }

            Op::Vecmat { v, m } => {
                let vv = self.nodes[v.0].value.data().to_vec();
                let mv = &self.nodes[m.0].value;
                let (rows, cols) = (mv.shape()[0], mv.shape()[1]);
                let mut dv = vec![0.0; rows];
                let mut dm = vec![0.0; rows * cols];
                for i in 0..rows {
                    for j in 0..cols {
                        let gj = g.data()[j];
                        dv[i] += gj * mv.data()[i * cols + j];
                        dm[i * cols + j] += vv[i] * gj;
                    }
                }
                self.accumulate(*v, |d| add_assign(d, &dv, 1.0));
                self.accumulate(*m, |d| add_assign(d, &dm, 1.0));
            }

            Op::ConvTime { x, kernels, bias, stride } => {
                let xv = &self.nodes[x.0].value;
                let kv = &self.nodes[kernels.0].value;
                let (c_out, c_in, klen) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
                let batched = xv.rank() == 3;
                let (b_n, t_in) = if batched {
                    (xv.shape()[0], xv.shape()[2])
                } else {
                    (1, xv.shape()[1])
                };
                let t_out = (t_in - klen) / stride + 1;
                let mut dx = vec![0.0; xv.numel()];
                let mut dk = vec![0.0; kv.numel()];
                let mut db = vec![0.0; c_out];
                for b in 0..b_n {
                    for o in 0..c_out {
                        let g_row = &g.data()[(b * c_out + o) * t_out..(b * c_out + o + 1) * t_out];
                        for c in 0..c_in {
                            let x_row = &xv.data()[(b * c_in + c) * t_in..(b * c_in + c + 1) * t_in];
                            let dx_row = &mut dx[(b * c_in + c) * t_in..(b * c_in + c + 1) * t_in];
                            for k in 0..klen {
                                let w = kv.data()[(o * c_in + c) * klen + k];
                                let mut dw = 0.0;
                                for t in 0..t_out {
                                    let gi = g_row[t];
                                    dx_row[t * stride + k] += gi * w;
                                    dw += gi * x_row[t * stride + k];
                                }
                                dk[(o * c_in + c) * klen + k] += dw;
                            }
                        }
                        for t in 0..t_out {
                            db[o] += g_row[t];
                        }
                    }
                }
                self.accumulate(*x, |d| add_assign(d, &dx, 1.0));
                self.accumulate(*kernels, |d| add_assign(d, &dk, 1.0));
                if let Some(bias) = bias {
                    self.accumulate(*bias, |d| add_assign(d, &db, 1.0));
                }
            }

            Op::MaxPoolTime { x, argmax } => {
                self.accumulate(*x, |dx| {
                    for (out_idx, &src) in argmax.iter().enumerate() {
                        dx[src] += g.data()[out_idx];
                    }
                });
            }

            Op::BatchNorm { x, gamma, beta, cache } => {
                let gv = self.nodes[gamma.0].value.data().to_vec();
                let (b_n, c_n, t_n) = (cache.batch, cache.channels, cache.time);
                let count = (b_n * t_n) as f64;
                let mut dx = vec![0.0; b_n * c_n * t_n];
                let mut dgamma = vec![0.0; c_n];
                let mut dbeta = vec![0.0; c_n];
                for c in 0..c_n {
                    let mut sum_dy = 0.0;
                    let mut sum_dy_xhat = 0.0;
                    for b in 0..b_n {
                        for t in 0..t_n {
                            let idx = (b * c_n + c) * t_n + t;
                            let dy = g.data()[idx];
                            sum_dy += dy;
                            sum_dy_xhat += dy * cache.xhat[idx];
                        }
                    }
                    dgamma[c] = sum_dy_xhat;
                    dbeta[c] = sum_dy;
                    let inv_std = cache.inv_std[c];
                    for b in 0..b_n {
                        for t in 0..t_n {
                            let idx = (b * c_n + c) * t_n + t;
                            let dy = g.data()[idx];
                            dx[idx] = if cache.train {
                                gv[c] * inv_std
                                    * (dy - sum_dy / count - cache.xhat[idx] * sum_dy_xhat / count)
                            } else {
                                gv[c] * inv_std * dy
                            };
                        }
                    }
                }
                self.accumulate(*x, |d| add_assign(d, &dx, 1.0));
                self.accumulate(*gamma, |d| add_assign(d, &dgamma, 1.0));
                self.accumulate(*beta, |d| add_assign(d, &dbeta, 1.0));
            }

            Op::Unary { kind, x } => {
                let xv = self.nodes[x.0].value.data().to_vec();
                let yv = self.nodes[id].value.data().to_vec();
                let kind = *kind;
                self.accumulate(*x, |dx| {
                    for i in 0..dx.len() {
                        let local = match kind {
                            Activation::Relu => {
                                if xv[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Activation::Tanh => 1.0 - yv[i] * yv[i],
                            Activation::Sigmoid => yv[i] * (1.0 - yv[i]),
                        };
                        dx[i] += g.data()[i] * local;
                    }
                });
            }

            Op::SoftmaxVec { x, mask } => {
                let yv = self.nodes[id].value.data().to_vec();
                let live = |i: usize| mask.as_ref().map_or(true, |m| m[i]);
                let dot: f64 = (0..yv.len())
                    .filter(|&i| live(i))
                    .map(|i| yv[i] * g.data()[i])
                    .sum();
                self.accumulate(*x, |dx| {
                    for i in 0..dx.len() {
                        if live(i) {
                            dx[i] += yv[i] * (g.data()[i] - dot);
                        }
                    }
                });
            }

            Op::Dropout { x, scale, mask } => {
                let scale = *scale;
                self.accumulate(*x, |dx| {
                    for i in 0..dx.len() {
                        if mask[i] {
                            dx[i] += g.data()[i] * scale;
                        }
                    }
                });
            }

            Op::Concat { a, b } => {
                let a_shape = self.nodes[a.0].value.shape().to_vec();
                let b_cols_total = self.nodes[b.0].value.numel();
                if a_shape.len() == 1 {
                    let m = a_shape[0];
                    self.accumulate(*a, |da| add_assign(da, &g.data()[..m], 1.0));
                    self.accumulate(*b, |db| add_assign(db, &g.data()[m..], 1.0));
                } else {
                    let rows = a_shape[0];
                    let ac = a_shape[1];
                    let bc = b_cols_total / rows;
                    let cols = ac + bc;
                    self.accumulate(*a, |da| {
                        for r in 0..rows {
                            add_assign(&mut da[r * ac..(r + 1) * ac], &g.data()[r * cols..r * cols + ac], 1.0);
                        }
                    });
                    self.accumulate(*b, |db| {
                        for r in 0..rows {
                            add_assign(&mut db[r * bc..(r + 1) * bc], &g.data()[r * cols + ac..(r + 1) * cols], 1.0);
                        }
                    });
                }
            }

            Op::Slice0 { x, from } => {
                let stride: usize = self.nodes[id].value.shape()[1..].iter().product();
                let offset = from * stride;
                self.accumulate(*x, |dx| {
                    add_assign(&mut dx[offset..offset + g.numel()], g.data(), 1.0);
                });
            }

            Op::Reshape { x } => {
                self.accumulate(*x, |dx| add_assign(dx, g.data(), 1.0));
            }

            Op::StackRows { rows } => {
                let cols = self.nodes[id].value.shape()[1];
                for (r, var) in rows.iter().enumerate() {
                    self.accumulate(*var, |d| {
                        add_assign(d, &g.data()[r * cols..(r + 1) * cols], 1.0)
                    });
                }
            }

            Op::Embed { table, ids, pad_id } => {
                let dim = self.nodes[table.0].value.shape()[1];
                // PAD row stays frozen: its gradient is never accumulated.
                self.accumulate(*table, |dt| {
                    for (r, &id) in ids.iter().enumerate() {
                        if id == *pad_id {
                            continue;
                        }
                        let off = id as usize * dim;
                        add_assign(&mut dt[off..off + dim], &g.data()[r * dim..(r + 1) * dim], 1.0);
                    }
                });
            }

            Op::SoftmaxCrossEntropy { logits, labels, probs, weights } => {
                let go = g.item();
                let classes = probs.shape()[1];
                let rows = labels.len();
                let scale = go / rows as f64;
                self.accumulate(*logits, |dl| {
                    for (r, &label) in labels.iter().enumerate() {
                        let w = weights.as_ref().map_or(1.0, |ws| ws[r]);
                        for c in 0..classes {
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            dl[r * classes + c] += scale * w * (probs.data()[r * classes + c] - onehot);
                        }
                    }
                });
            }
        }
        self.ops[id] = op;
    }
}

fn add_assign(dst: &mut [f64], src: &[f64], scale: f64) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * scale;
    }
}
