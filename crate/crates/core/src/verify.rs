//! The finite-difference verification suite behind the `gradcheck`
//! command and the acceptance gate: every differentiable operation and
//! the full fused model, checked against central differences.

use crate::error::Result;
use crate::model::{
    attention, bigru, cnn_forward, gru_cell, han_forward, AttentionParams, AttentionVars,
    CnnBlockSpec, CnnBlockVars, CnnParams, CnnVars, GruParams, GruVars, HanParams, HanVars,
};
use crate::tensor::{grad_check, GradCheckOptions, Graph, Mode, RunningStats, Tensor, Var};
use crate::text::{build_vocab, segment_sentences, TokenGrid};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Outcome of one op's check across its seeds.
#[derive(Debug, Clone)]
pub struct OpCheckResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub results: Vec<OpCheckResult>,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.max_rel_error < self.tolerance)
    }

    /// The check with the largest error.
    pub fn worst(&self) -> &OpCheckResult {
        self.results
            .iter()
            .max_by(|a, b| a.max_rel_error.partial_cmp(&b.max_rel_error).unwrap())
            .expect("registry is never empty")
    }
}

/// Names of every check in the suite, in execution order.
pub fn op_registry() -> Vec<&'static str> {
    vec![
        "add",
        "sub",
        "mul",
        "scale",
        "sum",
        "matmul",
        "linear",
        "matvec",
        "vecmat",
        "conv_time",
        "maxpool_time",
        "batchnorm",
        "relu",
        "tanh",
        "sigmoid",
        "softmax",
        "dropout",
        "concat",
        "slice0",
        "reshape",
        "stack_rows",
        "embed",
        "softmax_cross_entropy",
        "gru_cell",
        "attention",
        "bigru",
        "han_forward",
        "cnn_forward",
        "full_model",
    ]
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random values kept a margin away from zero, for kinked activations.
fn rand_tensor_off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            v + 0.05 * v.signum()
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// A shuffled lattice: pairwise gaps of at least 0.1, so pooling
/// argmaxes cannot flip under the finite-difference step.
fn lattice_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - n as f64 * 0.05).collect();
    vals.as_mut_slice().shuffle(rng);
    Tensor::new(shape.to_vec(), vals).unwrap()
}

/// Reduces an op output to a scalar loss against random coefficients,
/// so every output coordinate influences the check.
fn coef_loss(g: &mut Graph, out: Var, coef: &Tensor) -> Result<Var> {
    let c = g.constant(coef.clone());
    let prod = g.mul(out, c)?;
    g.sum(prod)
}

type CheckFn = fn(u64, &GradCheckOptions) -> Result<f64>;

/// Runs a single named check once; the suite's building block, also
/// handy for narrowing down a failure.
pub fn run_one(name: &str, seed: u64, opts: &GradCheckOptions) -> Result<f64> {
    let name = op_registry()
        .into_iter()
        .find(|&n| n == name)
        .unwrap_or("full_model");
    check_one(name)(seed, opts)
}

fn check_one(name: &'static str) -> CheckFn {
    match name {
        "add" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (rand_tensor(&mut r, &[3, 4]), rand_tensor(&mut r, &[3, 4]));
            let coef = rand_tensor(&mut r, &[3, 4]);
            grad_check(|g, v| { let y = g.add(v[0], v[1])?; coef_loss(g, y, &coef) }, &[a, b], opts, &mut r)
        },
        "sub" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (rand_tensor(&mut r, &[7]), rand_tensor(&mut r, &[7]));
            let coef = rand_tensor(&mut r, &[7]);
            grad_check(|g, v| { let y = g.sub(v[0], v[1])?; coef_loss(g, y, &coef) }, &[a, b], opts, &mut r)
        },
        "mul" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (rand_tensor(&mut r, &[2, 5]), rand_tensor(&mut r, &[2, 5]));
            let coef = rand_tensor(&mut r, &[2, 5]);
            grad_check(|g, v| { let y = g.mul(v[0], v[1])?; coef_loss(g, y, &coef) }, &[a, b], opts, &mut r)
        },
        "scale" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_tensor(&mut r, &[6]);
            let coef = rand_tensor(&mut r, &[6]);
            grad_check(|g, v| { let y = g.scale(v[0], -1.7)?; coef_loss(g, y, &coef) }, &[a], opts, &mut r)
        },
        "sum" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_tensor(&mut r, &[4, 3]);
            grad_check(|g, v| g.sum(v[0]), &[a], opts, &mut r)
        },
        "matmul" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (rand_tensor(&mut r, &[3, 4]), rand_tensor(&mut r, &[4, 2]));
            let coef = rand_tensor(&mut r, &[3, 2]);
            grad_check(|g, v| { let y = g.matmul(v[0], v[1])?; coef_loss(g, y, &coef) }, &[a, b], opts, &mut r)
        },
        "linear" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut r, &[3, 4]);
            let w = rand_tensor(&mut r, &[5, 4]);
            let b = rand_tensor(&mut r, &[5]);
            let coef = rand_tensor(&mut r, &[3, 5]);
            grad_check(
                |g, v| { let y = g.linear(v[0], v[1], Some(v[2]))?; coef_loss(g, y, &coef) },
                &[x, w, b],
                opts,
                &mut r,
            )
        },
        "matvec" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let m = rand_tensor(&mut r, &[4, 3]);
            let v_in = rand_tensor(&mut r, &[3]);
            let coef = rand_tensor(&mut r, &[4]);
            grad_check(|g, v| { let y = g.matvec(v[0], v[1])?; coef_loss(g, y, &coef) }, &[m, v_in], opts, &mut r)
        },
        "vecmat" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let v_in = rand_tensor(&mut r, &[4]);
            let m = rand_tensor(&mut r, &[4, 3]);
            let coef = rand_tensor(&mut r, &[3]);
            grad_check(|g, v| { let y = g.vecmat(v[0], v[1])?; coef_loss(g, y, &coef) }, &[v_in, m], opts, &mut r)
        },
        "conv_time" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut r, &[2, 3, 9]);
            let k = rand_tensor(&mut r, &[4, 3, 3]);
            let b = rand_tensor(&mut r, &[4]);
            let coef = rand_tensor(&mut r, &[2, 4, 4]);
            grad_check(
                |g, v| { let y = g.conv_time(v[0], v[1], Some(v[2]), 2)?; coef_loss(g, y, &coef) },
                &[x, k, b],
                opts,
                &mut r,
            )
        },
        "maxpool_time" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let x = lattice_tensor(&mut r, &[2, 3, 10]);
            let coef = rand_tensor(&mut r, &[2, 3, 4]);
            grad_check(|g, v| { let y = g.maxpool_time(v[0], 3, 2)?; coef_loss(g, y, &coef) }, &[x], opts, &mut r)
        },
        "batchnorm" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut r, &[4, 2, 3]);
            let gamma = rand_tensor(&mut r, &[2]);
            let beta = rand_tensor(&mut r, &[2]);
            let coef = rand_tensor(&mut r, &[4, 2, 3]);
            grad_check(
                |g, v| {
                    let mut stats = RunningStats::new(2);
                    let y = g.batchnorm(v[0], v[1], v[2], &mut stats, Mode::Train, 1e-5, 0.1)?;
                    coef_loss(g, y, &coef)
                },
                &[x, gamma, beta],
                opts,
                &mut r,
            )
        },
        "relu" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor_off_zero(&mut r, &[12]);
            let coef = rand_tensor(&mut r, &[12]);
            grad_check(|g, v| { let y = g.relu(v[0])?; coef_loss(g, y, &coef) }, &[x], opts, &mut r)
        },
        "tanh" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut r, &[12]);
            let coef = rand_tensor(&mut r, &[12]);
            grad_check(|g, v| { let y = g.tanh_act(v[0])?; coef_loss(g, y, &coef) }, &[x], opts, &mut r)
        },
        "sigmoid" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut r, &[12]);
            let coef = rand_tensor(&mut r, &[12]);
            grad_check(|g, v| { let y = g.sigmoid(v[0])?; coef_loss(g, y, &coef) }, &[x], opts, &mut r)
        },
        "softmax" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut r, &[6]);
            let coef = rand_tensor(&mut r, &[6]);
            let mask = [true, true, false, true, true, false];
            grad_check(|g, v| { let y = g.softmax(v[0], Some(&mask))?; coef_loss(g, y, &coef) }, &[x], opts, &mut r)
        },
        "dropout" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut r, &[20]);
            let coef = rand_tensor(&mut r, &[20]);
            let base = ChaCha8Rng::seed_from_u64(seed ^ 0xD509);
            grad_check(
                |g, v| {
                    // Same rng state per rebuild keeps the mask fixed.
                    let mut local = base.clone();
                    let y = g.dropout(v[0], 0.5, &mut local, Mode::Train)?;
                    coef_loss(g, y, &coef)
                },
                &[x],
                opts,
                &mut r,
            )
        },
        "concat" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (rand_tensor(&mut r, &[3]), rand_tensor(&mut r, &[5]));
            let coef = rand_tensor(&mut r, &[8]);
            grad_check(|g, v| { let y = g.concat(v[0], v[1])?; coef_loss(g, y, &coef) }, &[a, b], opts, &mut r)
        },
        "slice0" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut r, &[5, 3]);
            let coef = rand_tensor(&mut r, &[2, 3]);
            grad_check(|g, v| { let y = g.slice0(v[0], 1, 3)?; coef_loss(g, y, &coef) }, &[x], opts, &mut r)
        },
        "reshape" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut r, &[4, 3]);
            let coef = rand_tensor(&mut r, &[12]);
            grad_check(|g, v| { let y = g.reshape(v[0], vec![12])?; coef_loss(g, y, &coef) }, &[x], opts, &mut r)
        },
        "stack_rows" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let (a, b, c) = (
                rand_tensor(&mut r, &[4]),
                rand_tensor(&mut r, &[4]),
                rand_tensor(&mut r, &[4]),
            );
            let coef = rand_tensor(&mut r, &[3, 4]);
            grad_check(
                |g, v| { let y = g.stack_rows(&[v[0], v[1], v[2]])?; coef_loss(g, y, &coef) },
                &[a, b, c],
                opts,
                &mut r,
            )
        },
        "embed" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let table = rand_tensor(&mut r, &[5, 3]);
            let coef = rand_tensor(&mut r, &[4, 3]);
            grad_check(
                |g, v| { let y = g.embed(v[0], &[2, 4, 1, 2], 0)?; coef_loss(g, y, &coef) },
                &[table],
                opts,
                &mut r,
            )
        },
        "softmax_cross_entropy" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let logits = rand_tensor(&mut r, &[3, 5]);
            grad_check(
                |g, v| g.softmax_cross_entropy(v[0], &[1, 4, 0], None),
                &[logits],
                opts,
                &mut r,
            )
        },
        "gru_cell" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let p = GruParams::init(4, 3, &mut r);
            let x = rand_tensor(&mut r, &[4]);
            let h = rand_tensor(&mut r, &[3]);
            let coef = rand_tensor(&mut r, &[3]);
            grad_check(
                |g, v| {
                    let vars = GruVars { w_input: v[0], w_hidden: v[1], bias: v[2], hidden: 3 };
                    let y = gru_cell(g, v[3], v[4], &vars)?;
                    coef_loss(g, y, &coef)
                },
                &[p.w_input, p.w_hidden, p.bias, x, h],
                opts,
                &mut r,
            )
        },
        "attention" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let p = AttentionParams::init(4, 5, &mut r);
            let h = rand_tensor(&mut r, &[4, 4]);
            let coef = rand_tensor(&mut r, &[4]);
            let mask = [true, false, true, true];
            grad_check(
                |g, v| {
                    let vars = AttentionVars { w: v[0], b: v[1], context: v[2] };
                    let out = attention(g, v[3], &vars, &mask)?;
                    coef_loss(g, out.summary, &coef)
                },
                &[p.w, p.b, p.context, h],
                opts,
                &mut r,
            )
        },
        "bigru" => |seed, opts| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let fwd = GruParams::init(3, 2, &mut r);
            let bwd = GruParams::init(3, 2, &mut r);
            let seq = rand_tensor(&mut r, &[4, 3]);
            let coef = rand_tensor(&mut r, &[4, 4]);
            let mask = [true, true, false, true];
            grad_check(
                |g, v| {
                    let f = GruVars { w_input: v[0], w_hidden: v[1], bias: v[2], hidden: 2 };
                    let b = GruVars { w_input: v[3], w_hidden: v[4], bias: v[5], hidden: 2 };
                    let y = bigru(g, v[6], &mask, &f, &b)?;
                    coef_loss(g, y, &coef)
                },
                &[fwd.w_input, fwd.w_hidden, fwd.bias, bwd.w_input, bwd.w_hidden, bwd.bias, seq],
                opts,
                &mut r,
            )
        },
        "han_forward" => han_check,
        "cnn_forward" => cnn_check,
        "full_model" => full_model_check,
        other => unreachable!("unknown op {other}"),
    }
}

fn han_check(seed: u64, opts: &GradCheckOptions) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut params = HanParams::init(2, &mut r);
    // See full_model_check: keep attention gradients above the noise
    // floor of the pinned relative-error formula.
    for t in [&mut params.word_attn.context, &mut params.sent_attn.context] {
        for v in t.data_mut() {
            *v *= 8.0;
        }
    }
    let vocab = build_vocab(["p", "q", "s"], 1);
    let grid = TokenGrid::encode(&segment_sentences("p q\ns p\nq s p"), &vocab, 3, 3);
    let mut emb = rand_tensor(&mut r, &[vocab.size(), crate::text::EMBED_DIM]);
    for v in &mut emb.data_mut()[..crate::text::EMBED_DIM] {
        *v = 0.0;
    }
    let coef = rand_tensor(&mut r, &[4]);
    let tensors = vec![
        emb,
        params.word_fwd.w_input,
        params.word_fwd.w_hidden,
        params.word_fwd.bias,
        params.word_bwd.w_input,
        params.word_bwd.w_hidden,
        params.word_bwd.bias,
        params.word_attn.w,
        params.word_attn.b,
        params.word_attn.context,
        params.sent_fwd.w_input,
        params.sent_fwd.w_hidden,
        params.sent_fwd.bias,
        params.sent_bwd.w_input,
        params.sent_bwd.w_hidden,
        params.sent_bwd.bias,
        params.sent_attn.w,
        params.sent_attn.b,
        params.sent_attn.context,
    ];
    grad_check(
        |g, v| {
            let gru = |i: usize| GruVars { w_input: v[i], w_hidden: v[i + 1], bias: v[i + 2], hidden: 2 };
            let attn = |i: usize| AttentionVars { w: v[i], b: v[i + 1], context: v[i + 2] };
            let vars = HanVars {
                word_fwd: gru(1),
                word_bwd: gru(4),
                word_attn: attn(7),
                sent_fwd: gru(10),
                sent_bwd: gru(13),
                sent_attn: attn(16),
            };
            let out = han_forward(g, &grid, v[0], &vars)?;
            coef_loss(g, out.song_vec, &coef)
        },
        &tensors,
        opts,
        &mut r,
    )
}

fn cnn_check(seed: u64, opts: &GradCheckOptions) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let specs = vec![
        CnnBlockSpec { out_channels: 4, kernel_len: 5, stride: 1, pool_window: 3, dropout_p: 0.0 },
        CnnBlockSpec { out_channels: 5, kernel_len: 3, stride: 1, pool_window: 0, dropout_p: 0.0 },
    ];
    let mut params = CnnParams::init(specs.clone(), 8, 60, 7, &mut r)?;
    // Offset beta so most relu inputs sit away from the kink, where
    // central differences are meaningless.
    for b in &mut params.blocks {
        for v in b.beta.data_mut() {
            *v = 0.7;
        }
    }
    let x = rand_tensor(&mut r, &[2, 8, 60]);
    let coef = rand_tensor(&mut r, &[2, 7]);
    let tensors = vec![
        x,
        params.blocks[0].kernels.clone(),
        params.blocks[0].gamma.clone(),
        params.blocks[0].beta.clone(),
        params.blocks[1].kernels.clone(),
        params.blocks[1].gamma.clone(),
        params.blocks[1].beta.clone(),
        params.proj_w.clone(),
        params.proj_b.clone(),
    ];
    grad_check(
        |g, v| {
            let mut scratch = CnnParams::init(specs.clone(), 8, 60, 7, &mut ChaCha8Rng::seed_from_u64(0))?;
            let vars = CnnVars {
                blocks: vec![
                    CnnBlockVars { kernels: v[1], gamma: v[2], beta: v[3] },
                    CnnBlockVars { kernels: v[4], gamma: v[5], beta: v[6] },
                ],
                proj_w: v[7],
                proj_b: v[8],
            };
            let mut drop = ChaCha8Rng::seed_from_u64(1);
            let y = cnn_forward(g, v[0], &mut scratch, &vars, Mode::Train, &mut drop)?;
            coef_loss(g, y, &coef)
        },
        &tensors,
        opts,
        &mut r,
    )
}

/// Both branches fused into one scalar loss, checked end to end.
fn full_model_check(seed: u64, opts: &GradCheckOptions) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let specs = vec![CnnBlockSpec {
        out_channels: 3,
        kernel_len: 4,
        stride: 1,
        pool_window: 2,
        dropout_p: 0.0,
    }];
    let mut cnn = CnnParams::init(specs.clone(), 5, 20, 6, &mut r)?;
    for v in cnn.blocks[0].beta.data_mut() {
        *v = 0.7;
    }
    let mut han = HanParams::init(2, &mut r);
    // Condition the check point: the stock +-0.1 context init and short
    // look-alike sentences leave attention gradients near the f64 noise
    // floor of the central difference, where the pinned relative-error
    // formula cannot resolve them.
    for t in [&mut han.word_attn.context, &mut han.sent_attn.context] {
        for v in t.data_mut() {
            *v *= 8.0;
        }
    }
    let vocab = build_vocab(["la", "dah", "hm"], 1);
    let grids = [
        TokenGrid::encode(&segment_sentences("la dah\nhm la\ndah hm la"), &vocab, 3, 3),
        TokenGrid::encode(&segment_sentences("dah hm\nla la dah"), &vocab, 3, 3),
    ];
    let mut emb = rand_tensor(&mut r, &[vocab.size(), crate::text::EMBED_DIM]);
    for v in &mut emb.data_mut()[..crate::text::EMBED_DIM] {
        *v = 0.0;
    }
    let fusion_w = rand_tensor(&mut r, &[3, 10]); // 3 classes over 6 + 4 features
    let fusion_b = rand_tensor(&mut r, &[3]);
    let x = rand_tensor(&mut r, &[2, 5, 20]);
    let labels = [1usize, 2];

    let mut tensors = vec![
        x,
        emb,
        cnn.blocks[0].kernels.clone(),
        cnn.blocks[0].gamma.clone(),
        cnn.blocks[0].beta.clone(),
        cnn.proj_w.clone(),
        cnn.proj_b.clone(),
    ];
    for gp in [&han.word_fwd, &han.word_bwd] {
        tensors.push(gp.w_input.clone());
        tensors.push(gp.w_hidden.clone());
        tensors.push(gp.bias.clone());
    }
    tensors.push(han.word_attn.w.clone());
    tensors.push(han.word_attn.b.clone());
    tensors.push(han.word_attn.context.clone());
    for gp in [&han.sent_fwd, &han.sent_bwd] {
        tensors.push(gp.w_input.clone());
        tensors.push(gp.w_hidden.clone());
        tensors.push(gp.bias.clone());
    }
    tensors.push(han.sent_attn.w.clone());
    tensors.push(han.sent_attn.b.clone());
    tensors.push(han.sent_attn.context.clone());
    tensors.push(fusion_w);
    tensors.push(fusion_b);

    grad_check(
        |g, v| {
            let mut scratch =
                CnnParams::init(specs.clone(), 5, 20, 6, &mut ChaCha8Rng::seed_from_u64(0))?;
            let cnn_vars = CnnVars {
                blocks: vec![CnnBlockVars { kernels: v[2], gamma: v[3], beta: v[4] }],
                proj_w: v[5],
                proj_b: v[6],
            };
            let mut drop = ChaCha8Rng::seed_from_u64(1);
            let cnn_feats = cnn_forward(g, v[0], &mut scratch, &cnn_vars, Mode::Train, &mut drop)?;

            let gru = |i: usize| GruVars { w_input: v[i], w_hidden: v[i + 1], bias: v[i + 2], hidden: 2 };
            let attn = |i: usize| AttentionVars { w: v[i], b: v[i + 1], context: v[i + 2] };
            let han_vars = HanVars {
                word_fwd: gru(7),
                word_bwd: gru(10),
                word_attn: attn(13),
                sent_fwd: gru(16),
                sent_bwd: gru(19),
                sent_attn: attn(22),
            };
            let mut song_vecs = Vec::new();
            for grid in &grids {
                let out = han_forward(g, grid, v[1], &han_vars)?;
                song_vecs.push(out.song_vec);
            }
            let han_batch = g.stack_rows(&song_vecs)?;
            let joined = g.concat(han_batch, cnn_feats)?;
            let logits = g.linear(joined, v[25], Some(v[26]))?;
            g.softmax_cross_entropy(logits, &labels, None)
        },
        &tensors,
        opts,
        &mut r,
    )
}

/// Runs the whole registry. `fault` perturbs the named op's analytic
/// gradients so the suite demonstrably fails on a broken backward rule.
pub fn run_suite(
    base_seed: u64,
    primitive_seeds: usize,
    model_seeds: usize,
    fault: Option<&str>,
) -> Result<SuiteReport> {
    let mut results = Vec::new();
    for name in op_registry() {
        let heavy = matches!(name, "han_forward" | "cnn_forward" | "full_model");
        let seeds = if heavy { model_seeds } else { primitive_seeds };
        let opts = GradCheckOptions {
            max_coords: if heavy { 40 } else { 0 },
            perturb_analytic: if fault == Some(name) { 0.5 } else { 0.0 },
            ..Default::default()
        };
        let check = check_one(name);
        let mut worst = 0.0f64;
        for s in 0..seeds {
            let err = check(base_seed.wrapping_add(s as u64), &opts)?;
            if err > worst {
                worst = err;
            }
        }
        results.push(OpCheckResult {
            name,
            max_rel_error: worst,
            seeds,
        });
    }
    Ok(SuiteReport {
        results,
        tolerance: GRAD_TOLERANCE,
    })
}
