use super::graph::{Activation, BnCache, Graph, Mode, Op, RunningStats, Var};
use super::Tensor;
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

impl Graph {
    fn binary_same_shape(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape {
                op: name,
                detail: format!("{:?} vs {:?}", av.shape(), bv.shape()),
            });
        }
        let data: Vec<f64> = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let needs = self.needs_grad(a) || self.needs_grad(b);
        let op = match name {
            "add" => Op::Add { a, b },
            "sub" => Op::Sub { a, b },
            _ => Op::Mul { a, b },
        };
        self.push(name, out, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| v * c).collect())?;
        let needs = self.needs_grad(x);
        self.push("scale", out, Op::Scale { x, c }, needs)
    }

    /// Sum of all elements, as a scalar tensor of shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.value(x).data().iter().sum();
        let needs = self.needs_grad(x);
        self.push("sum", Tensor::scalar(total), Op::Sum { x }, needs)
    }

    /// Standard matrix product of `a: [m x k]` and `b: [k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("{:?} x {:?}", av.shape(), bv.shape()),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av.data()[i * k + p];
                let b_row = &bv.data()[p * n..(p + 1) * n];
                let o_row = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    o_row[j] += aip * b_row[j];
                }
            }
        }
        let needs = self.needs_grad(a) || self.needs_grad(b);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::Matmul { a, b }, needs)
    }

    /// Affine map `y = x . w^T + bias` with `w: [m_out x d_in]`.
    ///
    /// `x` may be a single vector `[d_in]` or a row batch `[n x d_in]`;
    /// the output has the matching rank.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rank() != 2 {
            return Err(Error::Shape {
                op: "linear",
                detail: format!("weight must be rank 2, got {:?}", wv.shape()),
            });
        }
        let (m_out, d_in) = (wv.shape()[0], wv.shape()[1]);
        let x_cols = *xv.shape().last().unwrap();
        if xv.rank() > 2 || x_cols != d_in {
            return Err(Error::Shape {
                op: "linear",
                detail: format!("input {:?} vs weight {:?}", xv.shape(), wv.shape()),
            });
        }
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.shape() != [m_out] {
                return Err(Error::Shape {
                    op: "linear",
                    detail: format!("bias {:?} vs weight {:?}", bv.shape(), wv.shape()),
                });
            }
        }
        let xv = self.value(x);
        let wv = self.value(w);
        let rows = if xv.rank() == 1 { 1 } else { xv.shape()[0] };
        let mut out = vec![0.0; rows * m_out];
        for r in 0..rows {
            let x_row = &xv.data()[r * d_in..(r + 1) * d_in];
            for o in 0..m_out {
                let w_row = &wv.data()[o * d_in..(o + 1) * d_in];
                let mut acc = 0.0;
                for j in 0..d_in {
                    acc += x_row[j] * w_row[j];
                }
                out[r * m_out + o] = acc;
            }
        }
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for r in 0..rows {
                for o in 0..m_out {
                    out[r * m_out + o] += bv[o];
                }
            }
        }
        let out_shape = if self.value(x).rank() == 1 { vec![m_out] } else { vec![rows, m_out] };
        let needs = self.needs_grad(x)
            || self.needs_grad(w)
            || bias.map_or(false, |b| self.needs_grad(b));
        self.push("linear", Tensor::new(out_shape, out)?, Op::Linear { x, w, bias }, needs)
    }

    /// `m: [n x a] . v: [a] -> [n]`.
    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (mv, vv) = (self.value(m), self.value(v));
        if mv.rank() != 2 || vv.rank() != 1 || mv.shape()[1] != vv.shape()[0] {
            return Err(Error::Shape {
                op: "matvec",
                detail: format!("{:?} x {:?}", mv.shape(), vv.shape()),
            });
        }
        let (rows, cols) = (mv.shape()[0], mv.shape()[1]);
        let out: Vec<f64> = (0..rows)
            .map(|i| {
                let row = &mv.data()[i * cols..(i + 1) * cols];
                row.iter().zip(vv.data()).map(|(&a, &b)| a * b).sum()
            })
            .collect();
        let needs = self.needs_grad(m) || self.needs_grad(v);
        self.push("matvec", Tensor::from_vec(out), Op::Matvec { m, v }, needs)
    }

    /// `v: [n] . m: [n x f] -> [f]` (weighted sum of the rows of `m`).
    pub fn vecmat(&mut self, v: Var, m: Var) -> Result<Var> {
        let (vv, mv) = (self.value(v), self.value(m));
        if vv.rank() != 1 || mv.rank() != 2 || vv.shape()[0] != mv.shape()[0] {
            return Err(Error::Shape {
                op: "vecmat",
                detail: format!("{:?} x {:?}", vv.shape(), mv.shape()),
            });
        }
        let (rows, cols) = (mv.shape()[0], mv.shape()[1]);
        let mut out = vec![0.0; cols];
        for i in 0..rows {
            let vi = vv.data()[i];
            let row = &mv.data()[i * cols..(i + 1) * cols];
            for j in 0..cols {
                out[j] += vi * row[j];
            }
        }
        let needs = self.needs_grad(v) || self.needs_grad(m);
        self.push("vecmat", Tensor::from_vec(out), Op::Vecmat { v, m }, needs)
    }

    /// Valid (no padding) cross-correlation along the time axis.
    ///
    /// `x` is `[c_in x t]` or `[b x c_in x t]`, `kernels` is
    /// `[c_out x c_in x k]`. Output time length is
    /// `(t - k) / stride + 1`.
    pub fn conv_time(&mut self, x: Var, kernels: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::Param {
                op: "conv_time",
                detail: "stride must be positive".into(),
            });
        }
        let (xv, kv) = (self.value(x), self.value(kernels));
        if kv.rank() != 3 {
            return Err(Error::Shape {
                op: "conv_time",
                detail: format!("kernels must be [c_out x c_in x k], got {:?}", kv.shape()),
            });
        }
        let (c_out, c_in, klen) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
        let batched = match xv.rank() {
            2 => false,
            3 => true,
            _ => {
                return Err(Error::Shape {
                    op: "conv_time",
                    detail: format!("input must be rank 2 or 3, got {:?}", xv.shape()),
                })
            }
        };
        let (b_n, x_cin, t_in) = if batched {
            (xv.shape()[0], xv.shape()[1], xv.shape()[2])
        } else {
            (1, xv.shape()[0], xv.shape()[1])
        };
        if x_cin != c_in {
            return Err(Error::Shape {
                op: "conv_time",
                detail: format!("input channels {:?} vs kernels {:?}", xv.shape(), kv.shape()),
            });
        }
        if klen > t_in {
            return Err(Error::Shape {
                op: "conv_time",
                detail: format!("kernel length {klen} exceeds input length {t_in}"),
            });
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [c_out] {
                return Err(Error::Shape {
                    op: "conv_time",
                    detail: format!("bias {:?} vs c_out {c_out}", self.value(b).shape()),
                });
            }
        }
        let t_out = (t_in - klen) / stride + 1;
        let xv = self.value(x);
        let kv = self.value(kernels);
        let mut out = vec![0.0; b_n * c_out * t_out];
        for b in 0..b_n {
            for o in 0..c_out {
                let o_row = &mut out[(b * c_out + o) * t_out..(b * c_out + o + 1) * t_out];
                for c in 0..c_in {
                    let x_row = &xv.data()[(b * c_in + c) * t_in..(b * c_in + c + 1) * t_in];
                    for k in 0..klen {
                        let w = kv.data()[(o * c_in + c) * klen + k];
                        if stride == 1 {
                            for (t, o_val) in o_row.iter_mut().enumerate() {
                                *o_val += w * x_row[t + k];
                            }
                        } else {
                            for (t, o_val) in o_row.iter_mut().enumerate() {
                                *o_val += w * x_row[t * stride + k];
                            }
                        }
                    }
                }
            }
        }
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for bi in 0..b_n {
                for o in 0..c_out {
                    for t in 0..t_out {
                        out[(bi * c_out + o) * t_out + t] += bv[o];
                    }
                }
            }
        }
        let out_shape = if batched { vec![b_n, c_out, t_out] } else { vec![c_out, t_out] };
        let needs = self.needs_grad(x)
            || self.needs_grad(kernels)
            || bias.map_or(false, |b| self.needs_grad(b));
        self.push(
            "conv_time",
            Tensor::new(out_shape, out)?,
            Op::ConvTime { x, kernels, bias, stride },
            needs,
        )
    }

    /// Per-channel max over sliding time windows. Backward routes the
    /// gradient to the first position attaining the max.
    pub fn maxpool_time(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        if window == 0 || stride == 0 {
            return Err(Error::Param {
                op: "maxpool_time",
                detail: "window and stride must be positive".into(),
            });
        }
        let xv = self.value(x);
        let batched = match xv.rank() {
            2 => false,
            3 => true,
            _ => {
                return Err(Error::Shape {
                    op: "maxpool_time",
                    detail: format!("input must be rank 2 or 3, got {:?}", xv.shape()),
                })
            }
        };
        let (b_n, c_n, t_in) = if batched {
            (xv.shape()[0], xv.shape()[1], xv.shape()[2])
        } else {
            (1, xv.shape()[0], xv.shape()[1])
        };
        if window > t_in {
            return Err(Error::Shape {
                op: "maxpool_time",
                detail: format!("window {window} exceeds input length {t_in}"),
            });
        }
        let t_out = (t_in - window) / stride + 1;
        let mut out = vec![0.0; b_n * c_n * t_out];
        let mut argmax = vec![0usize; b_n * c_n * t_out];
        for b in 0..b_n {
            for c in 0..c_n {
                let row_off = (b * c_n + c) * t_in;
                for t in 0..t_out {
                    let start = row_off + t * stride;
                    let mut best = xv.data()[start];
                    let mut best_idx = start;
                    for w in 1..window {
                        let v = xv.data()[start + w];
                        if v > best {
                            best = v;
                            best_idx = start + w;
                        }
                    }
                    let out_idx = (b * c_n + c) * t_out + t;
                    out[out_idx] = best;
                    argmax[out_idx] = best_idx;
                }
            }
        }
        let out_shape = if batched { vec![b_n, c_n, t_out] } else { vec![c_n, t_out] };
        let needs = self.needs_grad(x);
        self.push(
            "maxpool_time",
            Tensor::new(out_shape, out)?,
            Op::MaxPoolTime { x, argmax },
            needs,
        )
    }

    /// Batch normalization over `[b x c x t]` (or `[b x f]`, treated as
    /// `t = 1`). Train mode normalizes with batch statistics and updates
    /// `stats` in place; eval mode normalizes with `stats`.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: Mode,
        eps: f64,
        momentum: f64,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (b_n, c_n, t_n) = match xv.rank() {
            2 => (xv.shape()[0], xv.shape()[1], 1),
            3 => (xv.shape()[0], xv.shape()[1], xv.shape()[2]),
            _ => {
                return Err(Error::Shape {
                    op: "batchnorm",
                    detail: format!("input must be rank 2 or 3, got {:?}", xv.shape()),
                })
            }
        };
        if self.value(gamma).shape() != [c_n] || self.value(beta).shape() != [c_n] {
            return Err(Error::Shape {
                op: "batchnorm",
                detail: format!(
                    "gamma {:?} / beta {:?} vs {c_n} channels",
                    self.value(gamma).shape(),
                    self.value(beta).shape()
                ),
            });
        }
        if stats.mean.len() != c_n {
            return Err(Error::Shape {
                op: "batchnorm",
                detail: format!("running stats cover {} channels, input has {c_n}", stats.mean.len()),
            });
        }
        if mode == Mode::Train && b_n < 2 {
            return Err(Error::DegenerateBatch { batch: b_n });
        }

        let xv = self.value(x);
        let count = (b_n * t_n) as f64;
        let mut xhat = vec![0.0; xv.numel()];
        let mut inv_std = vec![0.0; c_n];
        let (gv, bv) = (
            self.value(gamma).data().to_vec(),
            self.value(beta).data().to_vec(),
        );
        let mut out = vec![0.0; xv.numel()];
        for c in 0..c_n {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = 0.0;
                    for b in 0..b_n {
                        for t in 0..t_n {
                            sum += xv.data()[(b * c_n + c) * t_n + t];
                        }
                    }
                    let mean = sum / count;
                    let mut sq = 0.0;
                    for b in 0..b_n {
                        for t in 0..t_n {
                            let d = xv.data()[(b * c_n + c) * t_n + t] - mean;
                            sq += d * d;
                        }
                    }
                    (mean, sq / count)
                }
                Mode::Eval => (stats.mean[c], stats.var[c]),
            };
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[c] = istd;
            for b in 0..b_n {
                for t in 0..t_n {
                    let idx = (b * c_n + c) * t_n + t;
                    let xh = (xv.data()[idx] - mean) * istd;
                    xhat[idx] = xh;
                    out[idx] = gv[c] * xh + bv[c];
                }
            }
            if mode == Mode::Train {
                // Running variance uses the unbiased estimate.
                let unbiased = var * count / (count - 1.0);
                stats.mean[c] = (1.0 - momentum) * stats.mean[c] + momentum * mean;
                stats.var[c] = (1.0 - momentum) * stats.var[c] + momentum * unbiased;
            }
        }
        let cache = Box::new(BnCache {
            xhat,
            inv_std,
            batch: b_n,
            channels: c_n,
            time: t_n,
            train: mode == Mode::Train,
        });
        let shape = self.value(x).shape().to_vec();
        let needs = self.needs_grad(x) || self.needs_grad(gamma) || self.needs_grad(beta);
        self.push(
            "batchnorm",
            Tensor::new(shape, out)?,
            Op::BatchNorm { x, gamma, beta, cache },
            needs,
        )
    }

    pub fn unary(&mut self, kind: Activation, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data: Vec<f64> = xv
            .data()
            .iter()
            .map(|&v| match kind {
                Activation::Relu => v.max(0.0),
                Activation::Tanh => v.tanh(),
                Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            })
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let needs = self.needs_grad(x);
        self.push(kind.name(), out, Op::Unary { kind, x }, needs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Activation::Relu, x)
    }

    pub fn tanh_act(&mut self, x: Var) -> Result<Var> {
        self.unary(Activation::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Activation::Sigmoid, x)
    }

    /// Numerically stable softmax over a vector. Masked positions get
    /// exactly zero; the unmasked ones sum to one.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 1 {
            return Err(Error::Shape {
                op: "softmax",
                detail: format!("expected a vector, got {:?}", xv.shape()),
            });
        }
        let n = xv.numel();
        if let Some(m) = mask {
            if m.len() != n {
                return Err(Error::Shape {
                    op: "softmax",
                    detail: format!("mask length {} vs input {n}", m.len()),
                });
            }
        }
        let live = |i: usize| mask.map_or(true, |m| m[i]);
        let max = (0..n)
            .filter(|&i| live(i))
            .map(|i| xv.data()[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::EmptySupport);
        }
        let mut out = vec![0.0; n];
        let mut denom = 0.0;
        for i in 0..n {
            if live(i) {
                let e = (xv.data()[i] - max).exp();
                out[i] = e;
                denom += e;
            }
        }
        for v in out.iter_mut() {
            *v /= denom;
        }
        let needs = self.needs_grad(x);
        self.push(
            "softmax",
            Tensor::from_vec(out),
            Op::SoftmaxVec { x, mask: mask.map(<[bool]>::to_vec) },
            needs,
        )
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`; eval mode
    /// is the identity.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut ChaCha8Rng, mode: Mode) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Param {
                op: "dropout",
                detail: format!("p must be in [0, 1), got {p}"),
            });
        }
        if mode == Mode::Eval {
            return Ok(x);
        }
        let xv = self.value(x);
        let n = xv.numel();
        let mask: Vec<bool> = (0..n).map(|_| rng.random::<f64>() >= p).collect();
        let scale = 1.0 / (1.0 - p);
        let data: Vec<f64> = xv
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &keep)| if keep { v * scale } else { 0.0 })
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let needs = self.needs_grad(x);
        self.push("dropout", out, Op::Dropout { x, scale, mask }, needs)
    }

    /// Concatenation: vectors end to end, or row batches along the
    /// feature axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (out, shape) = match (av.rank(), bv.rank()) {
            (1, 1) => {
                let mut data = av.data().to_vec();
                data.extend_from_slice(bv.data());
                let n = data.len();
                (data, vec![n])
            }
            (2, 2) if av.shape()[0] == bv.shape()[0] => {
                let rows = av.shape()[0];
                let (ac, bc) = (av.shape()[1], bv.shape()[1]);
                let mut data = Vec::with_capacity(rows * (ac + bc));
                for r in 0..rows {
                    data.extend_from_slice(&av.data()[r * ac..(r + 1) * ac]);
                    data.extend_from_slice(&bv.data()[r * bc..(r + 1) * bc]);
                }
                (data, vec![rows, ac + bc])
            }
            _ => {
                return Err(Error::Shape {
                    op: "concat",
                    detail: format!("{:?} vs {:?}", av.shape(), bv.shape()),
                })
            }
        };
        let needs = self.needs_grad(a) || self.needs_grad(b);
        self.push("concat", Tensor::new(shape, out)?, Op::Concat { a, b }, needs)
    }

    /// Slice along the leading axis: rows `from..to`.
    pub fn slice0(&mut self, x: Var, from: usize, to: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() == 0 || from >= to || to > xv.shape()[0] {
            return Err(Error::Shape {
                op: "slice0",
                detail: format!("range {from}..{to} of shape {:?}", xv.shape()),
            });
        }
        let stride: usize = xv.shape()[1..].iter().product();
        let data = xv.data()[from * stride..to * stride].to_vec();
        let mut shape = xv.shape().to_vec();
        shape[0] = to - from;
        let needs = self.needs_grad(x);
        self.push("slice0", Tensor::new(shape, data)?, Op::Slice0 { x, from }, needs)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let needs = self.needs_grad(x);
        self.push("reshape", out, Op::Reshape { x }, needs)
    }

    /// Stacks equal-length vectors into a matrix, one per row.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Param {
                op: "stack_rows",
                detail: "need at least one row".into(),
            });
        }
        let cols = self.value(rows[0]).numel();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let rv = self.value(r);
            if rv.rank() != 1 || rv.numel() != cols {
                return Err(Error::Shape {
                    op: "stack_rows",
                    detail: format!("expected vectors of length {cols}, got {:?}", rv.shape()),
                });
            }
            data.extend_from_slice(rv.data());
        }
        let needs = rows.iter().any(|&r| self.needs_grad(r));
        self.push(
            "stack_rows",
            Tensor::new(vec![rows.len(), cols], data)?,
            Op::StackRows { rows: rows.to_vec() },
            needs,
        )
    }

    /// Row lookup into an embedding table `[v x e]`. The `pad_id` row is
    /// frozen: backward never writes a gradient into it.
    pub fn embed(&mut self, table: Var, ids: &[u32], pad_id: u32) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(Error::Shape {
                op: "embed",
                detail: format!("table must be rank 2, got {:?}", tv.shape()),
            });
        }
        let (vocab, dim) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            let id = id as usize;
            if id >= vocab {
                return Err(Error::Param {
                    op: "embed",
                    detail: format!("id {id} out of range for vocab of {vocab}"),
                });
            }
            data.extend_from_slice(&tv.data()[id * dim..(id + 1) * dim]);
        }
        let needs = self.needs_grad(table);
        self.push(
            "embed",
            Tensor::new(vec![ids.len(), dim], data)?,
            Op::Embed { table, ids: ids.to_vec(), pad_id },
            needs,
        )
    }

    /// Fused softmax + categorical cross-entropy, averaged over the
    /// batch. The backward rule is the closed form `(p - onehot) / b`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        weights: Option<&[f64]>,
    ) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                detail: format!("logits {:?} vs {} labels", lv.shape(), labels.len()),
            });
        }
        let (rows, classes) = (lv.shape()[0], lv.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Param {
                op: "softmax_cross_entropy",
                detail: format!("label {bad} out of range for {classes} classes"),
            });
        }
        if let Some(w) = weights {
            if w.len() != rows {
                return Err(Error::Shape {
                    op: "softmax_cross_entropy",
                    detail: format!("{} weights vs {rows} rows", w.len()),
                });
            }
        }
        let mut probs = vec![0.0; rows * classes];
        let mut loss = 0.0;
        for r in 0..rows {
            let row = &lv.data()[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for c in 0..classes {
                let e = (row[c] - max).exp();
                probs[r * classes + c] = e;
                denom += e;
            }
            for c in 0..classes {
                probs[r * classes + c] /= denom;
            }
            let p = probs[r * classes + labels[r]].max(1e-12);
            let w = weights.map_or(1.0, |ws| ws[r]);
            loss -= w * p.ln();
        }
        loss /= rows as f64;
        let needs = self.needs_grad(logits);
        self.push(
            "softmax_cross_entropy",
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs: Tensor::new(vec![rows, classes], probs)?,
                weights: weights.map(<[f64]>::to_vec),
            },
            needs,
        )
    }
}
