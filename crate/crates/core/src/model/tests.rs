use super::*;
use crate::tensor::{grad_check, GradCheckOptions, Graph, Mode, RunningStats, Tensor};
use crate::text::{build_vocab, segment_sentences, EmbeddingMatrix, TokenGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Independently coded GRU step, the formula oracle.
fn gru_oracle(x: &[f64], h: &[f64], p: &GruParams) -> Vec<f64> {
    let hidden = p.hidden;
    let sigma = |v: f64| 1.0 / (1.0 + (-v).exp());
    let dot_in = |row: usize| -> f64 {
        (0..x.len()).map(|j| p.w_input.at2(row, j) * x[j]).sum()
    };
    let dot_hid = |row: usize, v: &[f64]| -> f64 {
        (0..hidden).map(|j| p.w_hidden.at2(row, j) * v[j]).sum()
    };
    let r: Vec<f64> = (0..hidden)
        .map(|i| sigma(dot_in(i) + dot_hid(i, h) + p.bias.data()[i]))
        .collect();
    let z: Vec<f64> = (0..hidden)
        .map(|i| sigma(dot_in(hidden + i) + dot_hid(hidden + i, h) + p.bias.data()[hidden + i]))
        .collect();
    let rh: Vec<f64> = (0..hidden).map(|i| r[i] * h[i]).collect();
    let n: Vec<f64> = (0..hidden)
        .map(|i| (dot_in(2 * hidden + i) + dot_hid(2 * hidden + i, &rh) + p.bias.data()[2 * hidden + i]).tanh())
        .collect();
    (0..hidden).map(|i| (1.0 - z[i]) * h[i] + z[i] * n[i]).collect()
}

fn run_gru_cell(params: &GruParams, x: &Tensor, h: &Tensor) -> Vec<f64> {
    let mut g = Graph::new();
    let mut reg = Registry::new();
    let vars = params.register(&mut g, &mut reg, "gru");
    let xv = g.constant(x.clone());
    let hv = g.constant(h.clone());
    let out = gru_cell(&mut g, xv, hv, &vars).unwrap();
    g.value(out).data().to_vec()
}

// ---- gru_cell ----

#[test]
fn gru_zero_params_zero_state_is_fixed_point() {
    let params = GruParams {
        w_input: Tensor::zeros(&[9, 4]),
        w_hidden: Tensor::zeros(&[9, 3]),
        bias: Tensor::zeros(&[9]),
        hidden: 3,
    };
    let mut r = rng(1);
    let x = rand_tensor(&mut r, &[4]);
    let out = run_gru_cell(&params, &x, &Tensor::zeros(&[3]));
    assert_eq!(out, vec![0.0; 3]);
}

#[test]
fn gru_blocked_update_gate_copies_state() {
    let mut r = rng(2);
    let mut params = GruParams::init(4, 3, &mut r);
    // Huge negative update-gate bias forces z ~ 0, so h' ~ h.
    for i in 3..6 {
        params.bias.data_mut()[i] = -40.0;
    }
    let x = rand_tensor(&mut r, &[4]);
    let h = rand_tensor(&mut r, &[3]);
    let out = run_gru_cell(&params, &x, &h);
    assert!(max_abs_diff(&out, h.data()) < 1e-12);
}

#[test]
fn gru_matches_formula_oracle() {
    for seed in 0..50 {
        let mut r = rng(100 + seed);
        let params = GruParams::init(5, 4, &mut r);
        let x = rand_tensor(&mut r, &[5]);
        let h = rand_tensor(&mut r, &[4]);
        let out = run_gru_cell(&params, &x, &h);
        let expect = gru_oracle(x.data(), h.data(), &params);
        assert!(max_abs_diff(&out, &expect) <= 1e-12, "seed {seed}");
    }
}

#[test]
fn gru_gradient_check() {
    let mut r = rng(3);
    let params = GruParams::init(4, 3, &mut r);
    let x = rand_tensor(&mut r, &[4]);
    let h = rand_tensor(&mut r, &[3]);
    let coef = rand_tensor(&mut r, &[3]);
    let err = grad_check(
        |g, vars| {
            let gvars = GruVars {
                w_input: vars[0],
                w_hidden: vars[1],
                bias: vars[2],
                hidden: 3,
            };
            let out = gru_cell(g, vars[3], vars[4], &gvars)?;
            let c = g.constant(coef.clone());
            let prod = g.mul(out, c)?;
            g.sum(prod)
        },
        &[params.w_input, params.w_hidden, params.bias, x, h],
        &GradCheckOptions::default(),
        &mut r,
    )
    .unwrap();
    assert!(err < 1e-6, "gru grad error {err}");
}

// ---- bigru ----

fn register_gru(g: &mut Graph, p: &GruParams, name: &str) -> GruVars {
    let mut reg = Registry::new();
    p.register(g, &mut reg, name)
}

#[test]
fn bigru_single_step() {
    let mut r = rng(4);
    let fwd = GruParams::init(4, 3, &mut r);
    let bwd = GruParams::init(4, 3, &mut r);
    let x = rand_tensor(&mut r, &[1, 4]);

    let mut g = Graph::new();
    let (fv, bv) = (register_gru(&mut g, &fwd, "f"), register_gru(&mut g, &bwd, "b"));
    let seq = g.constant(x.clone());
    let out = bigru(&mut g, seq, &[true], &fv, &bv).unwrap();
    assert_eq!(g.value(out).shape(), &[1, 6]);

    let hf = gru_oracle(x.data(), &[0.0; 3], &fwd);
    let hb = gru_oracle(x.data(), &[0.0; 3], &bwd);
    let expect: Vec<f64> = hf.into_iter().chain(hb).collect();
    assert!(max_abs_diff(g.value(out).data(), &expect) <= 1e-12);
}

#[test]
fn bigru_masked_step_carries_state() {
    let mut r = rng(5);
    let fwd = GruParams::init(4, 3, &mut r);
    let bwd = GruParams::init(4, 3, &mut r);
    let x = rand_tensor(&mut r, &[2, 4]);

    let mut g = Graph::new();
    let (fv, bv) = (register_gru(&mut g, &fwd, "f"), register_gru(&mut g, &bwd, "b"));
    let seq = g.constant(x);
    let out = bigru(&mut g, seq, &[true, false], &fv, &bv).unwrap();
    let y = g.value(out);
    // Forward half of the masked step 2 carries the step-1 state.
    assert_eq!(y.row(1)[..3], y.row(0)[..3]);
    // Backward direction saw nothing after position 1: initial state.
    assert_eq!(&y.row(1)[3..], &[0.0; 3]);
}

#[test]
fn bigru_matches_unrolled_oracle() {
    let mut r = rng(6);
    let fwd = GruParams::init(3, 2, &mut r);
    let bwd = GruParams::init(3, 2, &mut r);
    let x = rand_tensor(&mut r, &[5, 3]);

    let mut g = Graph::new();
    let (fv, bv) = (register_gru(&mut g, &fwd, "f"), register_gru(&mut g, &bwd, "b"));
    let seq = g.constant(x.clone());
    let out = bigru(&mut g, seq, &[true; 5], &fv, &bv).unwrap();

    // Manual unroll.
    let mut hf = vec![0.0; 2];
    let mut fwd_states = Vec::new();
    for t in 0..5 {
        hf = gru_oracle(x.row(t), &hf, &fwd);
        fwd_states.push(hf.clone());
    }
    let mut hb = vec![0.0; 2];
    let mut bwd_states = vec![vec![]; 5];
    for t in (0..5).rev() {
        hb = gru_oracle(x.row(t), &hb, &bwd);
        bwd_states[t] = hb.clone();
    }
    for t in 0..5 {
        let expect: Vec<f64> = fwd_states[t].iter().chain(&bwd_states[t]).copied().collect();
        assert!(max_abs_diff(g.value(out).row(t), &expect) <= 1e-12, "step {t}");
    }
}

#[test]
fn bigru_all_masked_errors() {
    let mut r = rng(7);
    let fwd = GruParams::init(3, 2, &mut r);
    let bwd = GruParams::init(3, 2, &mut r);
    let mut g = Graph::new();
    let (fv, bv) = (register_gru(&mut g, &fwd, "f"), register_gru(&mut g, &bwd, "b"));
    let seq = g.constant(Tensor::zeros(&[2, 3]));
    assert!(bigru(&mut g, seq, &[false, false], &fv, &bv).is_err());
}

// ---- attention ----

fn register_attn(g: &mut Graph, p: &AttentionParams) -> AttentionVars {
    let mut reg = Registry::new();
    p.register(g, &mut reg, "attn")
}

#[test]
fn attention_singleton_is_identity() {
    let mut r = rng(8);
    let params = AttentionParams::init(4, 5, &mut r);
    let h = rand_tensor(&mut r, &[1, 4]);
    let mut g = Graph::new();
    let vars = register_attn(&mut g, &params);
    let hv = g.constant(h.clone());
    let out = attention(&mut g, hv, &vars, &[true]).unwrap();
    assert_eq!(g.value(out.weights).data(), &[1.0]);
    assert_eq!(g.value(out.summary).data(), h.data());
}

#[test]
fn attention_uniform_on_identical_rows() {
    let mut r = rng(9);
    let params = AttentionParams::init(3, 4, &mut r);
    let row = rand_tensor(&mut r, &[3]);
    let mut h = Tensor::zeros(&[4, 3]);
    for i in 0..4 {
        h.data_mut()[i * 3..(i + 1) * 3].copy_from_slice(row.data());
    }
    let mut g = Graph::new();
    let vars = register_attn(&mut g, &params);
    let hv = g.constant(h);
    let out = attention(&mut g, hv, &vars, &[true; 4]).unwrap();
    for &w in g.value(out.weights).data() {
        assert!((w - 0.25).abs() < 1e-12);
    }
    assert!(max_abs_diff(g.value(out.summary).data(), row.data()) < 1e-12);
}

#[test]
fn attention_matches_formula_oracle() {
    let mut r = rng(10);
    let params = AttentionParams::init(3, 4, &mut r);
    let h = rand_tensor(&mut r, &[4, 3]);
    let mut g = Graph::new();
    let vars = register_attn(&mut g, &params);
    let hv = g.constant(h.clone());
    let out = attention(&mut g, hv, &vars, &[true; 4]).unwrap();

    // Direct evaluation: u_i = tanh(W h_i + b); a = softmax(u_i . c); s = sum a_i h_i.
    let mut scores = Vec::new();
    for i in 0..4 {
        let mut u = Vec::new();
        for a in 0..4 {
            let mut acc = params.b.data()[a];
            for j in 0..3 {
                acc += params.w.at2(a, j) * h.at2(i, j);
            }
            u.push(acc.tanh());
        }
        scores.push(u.iter().zip(params.context.data()).map(|(x, c)| x * c).sum::<f64>());
    }
    let denom: f64 = scores.iter().map(|s| s.exp()).sum();
    let alpha: Vec<f64> = scores.iter().map(|s| s.exp() / denom).collect();
    let mut s = vec![0.0; 3];
    for i in 0..4 {
        for j in 0..3 {
            s[j] += alpha[i] * h.at2(i, j);
        }
    }
    assert!(max_abs_diff(g.value(out.weights).data(), &alpha) <= 1e-10);
    assert!(max_abs_diff(g.value(out.summary).data(), &s) <= 1e-10);
}

#[test]
fn attention_masked_positions_get_zero_weight() {
    let mut r = rng(11);
    let params = AttentionParams::init(3, 4, &mut r);
    let h = rand_tensor(&mut r, &[4, 3]);
    let mut g = Graph::new();
    let vars = register_attn(&mut g, &params);
    let hv = g.constant(h);
    let mask = [true, false, true, false];
    let out = attention(&mut g, hv, &vars, &mask).unwrap();
    let w = g.value(out.weights);
    assert_eq!(w.data()[1], 0.0);
    assert_eq!(w.data()[3], 0.0);
    assert!((w.data()[0] + w.data()[2] - 1.0).abs() < 1e-6);
    assert!(w.data().iter().all(|&v| v >= 0.0));
}

#[test]
fn attention_gradient_check() {
    let mut r = rng(12);
    let params = AttentionParams::init(3, 4, &mut r);
    let h = rand_tensor(&mut r, &[4, 3]);
    let coef = rand_tensor(&mut r, &[3]);
    let mask = [true, true, false, true];
    let err = grad_check(
        |g, vars| {
            let avars = AttentionVars {
                w: vars[0],
                b: vars[1],
                context: vars[2],
            };
            let out = attention(g, vars[3], &avars, &mask)?;
            let c = g.constant(coef.clone());
            let prod = g.mul(out.summary, c)?;
            g.sum(prod)
        },
        &[params.w, params.b, params.context, h],
        &GradCheckOptions::default(),
        &mut r,
    )
    .unwrap();
    assert!(err < 1e-6, "attention grad error {err}");
}

// ---- han_forward ----

fn toy_embedding(vocab_size: usize, seed: u64) -> EmbeddingMatrix {
    let mut r = rng(seed);
    EmbeddingMatrix {
        weights: {
            let mut t = rand_tensor(&mut r, &[vocab_size, crate::text::EMBED_DIM]);
            // PAD row stays zero.
            for v in &mut t.data_mut()[..crate::text::EMBED_DIM] {
                *v = 0.0;
            }
            t
        },
        trainable: true,
    }
}

fn han_song_vec(grid: &TokenGrid, emb: &EmbeddingMatrix, params: &HanParams) -> Vec<f64> {
    let mut g = Graph::new();
    let mut reg = Registry::new();
    let ev = reg.leaf(&mut g, "emb", &emb.weights, true);
    let vars = params.register(&mut g, &mut reg);
    let out = han_forward(&mut g, grid, ev, &vars).unwrap();
    g.value(out.song_vec).data().to_vec()
}

#[test]
fn han_output_dim_is_twice_hidden() {
    let mut r = rng(13);
    let params = HanParams::init(50, &mut r);
    let vocab = build_vocab(["la", "dah"], 1);
    let grid = TokenGrid::encode(&segment_sentences("la dah\ndah"), &vocab, 50, 20);
    let emb = toy_embedding(vocab.size(), 14);
    let song = han_song_vec(&grid, &emb, &params);
    assert_eq!(song.len(), 100);
}

#[test]
fn han_singleton_chain() {
    let mut r = rng(15);
    let params = HanParams::init(3, &mut r);
    let vocab = build_vocab(["word"], 1);
    let grid = TokenGrid::encode(&segment_sentences("word"), &vocab, 4, 5);
    let emb = toy_embedding(vocab.size(), 16);
    let song = han_song_vec(&grid, &emb, &params);

    // Oracle: the word's bidirectional state, then the sentence-level
    // bidirectional state of that vector; both attentions are singletons.
    let word_vec = emb.weights.row(vocab.id("word") as usize);
    let hf = gru_oracle(word_vec, &[0.0; 3], &params.word_fwd);
    let hb = gru_oracle(word_vec, &[0.0; 3], &params.word_bwd);
    let sent_vec: Vec<f64> = hf.into_iter().chain(hb).collect();
    let sf = gru_oracle(&sent_vec, &[0.0; 3], &params.sent_fwd);
    let sb = gru_oracle(&sent_vec, &[0.0; 3], &params.sent_bwd);
    let expect: Vec<f64> = sf.into_iter().chain(sb).collect();
    assert!(max_abs_diff(&song, &expect) <= 1e-12);
}

#[test]
fn han_empty_grid_errors() {
    let mut r = rng(17);
    let params = HanParams::init(3, &mut r);
    let vocab = build_vocab(["x"], 1);
    let grid = TokenGrid::encode(&[], &vocab, 4, 5);
    let emb = toy_embedding(vocab.size(), 18);
    let mut g = Graph::new();
    let mut reg = Registry::new();
    let ev = reg.leaf(&mut g, "emb", &emb.weights, true);
    let vars = params.register(&mut g, &mut reg);
    assert!(matches!(
        han_forward(&mut g, &grid, ev, &vars),
        Err(crate::Error::EmptyLyrics)
    ));
}

#[test]
fn han_ignores_masked_sentences_bitwise() {
    let mut r = rng(19);
    let params = HanParams::init(4, &mut r);
    let vocab = build_vocab(["one", "two", "three"], 1);
    let emb = toy_embedding(vocab.size(), 20);

    let small = TokenGrid::encode(&segment_sentences("one two\nthree"), &vocab, 2, 6);
    let padded = TokenGrid::encode(&segment_sentences("one two\nthree"), &vocab, 9, 6);
    let a = han_song_vec(&small, &emb, &params);
    let b = han_song_vec(&padded, &emb, &params);
    assert_eq!(a, b); // appending masked sentences changes nothing

    // Hand-permute two padded (all-PAD) rows: the grid is unchanged by
    // construction, so the forward is bitwise identical.
    let mut permuted = padded.clone();
    permuted.ids.swap(3 * 6, 7 * 6);
    permuted.word_mask.swap(3 * 6, 7 * 6);
    let sm: Vec<bool> = {
        let mut m = permuted.sent_mask.clone();
        m.swap(3, 7);
        m
    };
    permuted.sent_mask = sm;
    let c = han_song_vec(&permuted, &emb, &params);
    assert_eq!(a, c);
}

#[test]
fn han_matches_maskfree_reference_on_unpadded_input() {
    let mut r = rng(21);
    let params = HanParams::init(3, &mut r);
    let vocab = build_vocab(["a", "b", "c", "d"], 1);
    let emb = toy_embedding(vocab.size(), 22);
    let text = "a b c\nd b";

    // Padded path.
    let grid = TokenGrid::encode(&segment_sentences(text), &vocab, 6, 8);
    let song = han_song_vec(&grid, &emb, &params);

    // Mask-free reference: exact-length grids per sentence, no padding.
    let tight = TokenGrid::encode(&segment_sentences(text), &vocab, 2, 3);
    let reference = han_song_vec(&tight, &emb, &params);
    assert!(max_abs_diff(&song, &reference) <= 1e-8);
}

#[test]
fn han_attention_weights_are_distributions() {
    let mut r = rng(23);
    let params = HanParams::init(4, &mut r);
    let vocab = build_vocab(["x", "y", "z"], 1);
    let grid = TokenGrid::encode(&segment_sentences("x y\nz z y"), &vocab, 5, 4);
    let emb = toy_embedding(vocab.size(), 24);

    let mut g = Graph::new();
    let mut reg = Registry::new();
    let ev = reg.leaf(&mut g, "emb", &emb.weights, true);
    let vars = params.register(&mut g, &mut reg);
    let out = han_forward(&mut g, &grid, ev, &vars).unwrap();

    let sw = g.value(out.sent_weights);
    assert!((sw.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(sw.data().iter().all(|&v| v >= 0.0));
    for (i, &s) in out.sentences.iter().enumerate() {
        let ww = g.value(out.word_weights[i]);
        assert!((ww.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for (w, &live) in grid.sentence_word_mask(s).iter().enumerate() {
            if !live {
                assert_eq!(ww.data()[w], 0.0);
            }
        }
    }
}

#[test]
fn han_full_gradient_check_two_sentences() {
    let mut r = rng(25);
    let params = HanParams::init(2, &mut r);
    let vocab = build_vocab(["p", "q", "s"], 1);
    let grid = TokenGrid::encode(&segment_sentences("p q\ns"), &vocab, 3, 3);
    let emb = toy_embedding(vocab.size(), 26);
    let coef = rand_tensor(&mut r, &[4]);

    let tensors = vec![
        emb.weights.clone(),
        params.word_fwd.w_input.clone(),
        params.word_fwd.w_hidden.clone(),
        params.word_fwd.bias.clone(),
        params.word_bwd.w_input.clone(),
        params.word_bwd.w_hidden.clone(),
        params.word_bwd.bias.clone(),
        params.word_attn.w.clone(),
        params.word_attn.b.clone(),
        params.word_attn.context.clone(),
        params.sent_fwd.w_input.clone(),
        params.sent_fwd.w_hidden.clone(),
        params.sent_fwd.bias.clone(),
        params.sent_bwd.w_input.clone(),
        params.sent_bwd.w_hidden.clone(),
        params.sent_bwd.bias.clone(),
        params.sent_attn.w.clone(),
        params.sent_attn.b.clone(),
        params.sent_attn.context.clone(),
    ];
    let grid2 = grid.clone();
    let err = grad_check(
        |g, vars| {
            let gru = |i: usize, h: usize| GruVars {
                w_input: vars[i],
                w_hidden: vars[i + 1],
                bias: vars[i + 2],
                hidden: h,
            };
            let attn = |i: usize| AttentionVars {
                w: vars[i],
                b: vars[i + 1],
                context: vars[i + 2],
            };
            let hvars = HanVars {
                word_fwd: gru(1, 2),
                word_bwd: gru(4, 2),
                word_attn: attn(7),
                sent_fwd: gru(10, 2),
                sent_bwd: gru(13, 2),
                sent_attn: attn(16),
            };
            let out = han_forward(g, &grid2, vars[0], &hvars)?;
            let c = g.constant(coef.clone());
            let prod = g.mul(out.song_vec, c)?;
            g.sum(prod)
        },
        &tensors,
        &GradCheckOptions {
            max_coords: 40,
            ..Default::default()
        },
        &mut r,
    )
    .unwrap();
    assert!(err < 1e-4, "han grad error {err}");
}

// ---- cnn ----

fn toy_block_spec() -> CnnBlockSpec {
    CnnBlockSpec {
        out_channels: 3,
        kernel_len: 2,
        stride: 1,
        pool_window: 2,
        dropout_p: 0.3,
    }
}

#[test]
fn cnn_block_identity_composition() {
    // Kernel 1 identity conv, fresh running stats in eval mode, no pool,
    // no dropout: the block reduces to relu (up to the BN epsilon).
    let channels = 2;
    let spec = CnnBlockSpec {
        out_channels: channels,
        kernel_len: 1,
        stride: 1,
        pool_window: 0,
        dropout_p: 0.0,
    };
    let mut kernels = Tensor::zeros(&[channels, channels, 1]);
    for c in 0..channels {
        kernels.data_mut()[c * channels + c] = 1.0;
    }
    let mut r = rng(27);
    let x = rand_tensor(&mut r, &[2, channels, 6]);

    let mut g = Graph::new();
    let vars = CnnBlockVars {
        kernels: g.constant(kernels),
        gamma: g.constant(Tensor::full(&[channels], 1.0)),
        beta: g.constant(Tensor::zeros(&[channels])),
    };
    let xv = g.constant(x.clone());
    let mut stats = RunningStats::new(channels);
    let out = cnn_block(&mut g, xv, &spec, &vars, &mut stats, Mode::Eval, &mut r).unwrap();
    for (y, x) in g.value(out).data().iter().zip(x.data()) {
        assert!((y - x.max(0.0)).abs() < 1e-4);
    }
}

#[test]
fn cnn_block_relu_kills_negative_preactivations() {
    let spec = CnnBlockSpec {
        out_channels: 2,
        kernel_len: 1,
        stride: 1,
        pool_window: 0,
        dropout_p: 0.0,
    };
    let mut r = rng(28);
    let mut g = Graph::new();
    let vars = CnnBlockVars {
        kernels: g.constant(Tensor::zeros(&[2, 2, 1])),
        gamma: g.constant(Tensor::full(&[2], 1.0)),
        beta: g.constant(Tensor::full(&[2], -3.0)),
    };
    // Eval mode with unit running stats: pre-activations are all -3.
    let xv = g.constant(Tensor::zeros(&[2, 2, 5]));
    let mut stats = RunningStats::new(2);
    let out = cnn_block(&mut g, xv, &spec, &vars, &mut stats, Mode::Eval, &mut r).unwrap();
    assert!(g.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn cnn_block_matches_staged_composition() {
    let spec = toy_block_spec();
    let mut r = rng(29);
    let x = rand_tensor(&mut r, &[3, 4, 9]);
    let kernels = rand_tensor(&mut r, &[3, 4, 2]);
    let gamma = rand_tensor(&mut r, &[3]);
    let beta = rand_tensor(&mut r, &[3]);

    let run = |staged: bool, rng_drop: &mut ChaCha8Rng| -> Tensor {
        let mut g = Graph::new();
        let vars = CnnBlockVars {
            kernels: g.constant(kernels.clone()),
            gamma: g.constant(gamma.clone()),
            beta: g.constant(beta.clone()),
        };
        let xv = g.constant(x.clone());
        let mut stats = RunningStats::new(3);
        let out = if staged {
            let conv = g.conv_time(xv, vars.kernels, None, spec.stride).unwrap();
            let bn = g
                .batchnorm(conv, vars.gamma, vars.beta, &mut stats, Mode::Train, BN_EPS, BN_MOMENTUM)
                .unwrap();
            let act = g.relu(bn).unwrap();
            let pooled = g.maxpool_time(act, spec.pool_window, spec.pool_window).unwrap();
            g.dropout(pooled, spec.dropout_p, rng_drop, Mode::Train).unwrap()
        } else {
            cnn_block(&mut g, xv, &spec, &vars, &mut stats, Mode::Train, rng_drop).unwrap()
        };
        g.value(out).clone()
    };

    // Identical rng state for both paths keeps the dropout mask equal.
    let mut r1 = rng(999);
    let mut r2 = rng(999);
    let (a, b) = (run(false, &mut r1), run(true, &mut r2));
    assert!(max_abs_diff(a.data(), b.data()) <= 1e-10);
}

fn toy_cnn(grid_mels: usize, grid_frames: usize, seed: u64) -> CnnParams {
    let specs = vec![
        CnnBlockSpec {
            out_channels: 4,
            kernel_len: 5,
            stride: 1,
            pool_window: 3,
            dropout_p: 0.0,
        },
        CnnBlockSpec {
            out_channels: 5,
            kernel_len: 3,
            stride: 1,
            pool_window: 0,
            dropout_p: 0.0,
        },
    ];
    CnnParams::init(specs, grid_mels, grid_frames, 7, &mut rng(seed)).unwrap()
}

#[test]
fn cnn_forward_zero_input_gives_zero_features() {
    let mut params = toy_cnn(8, 60, 30);
    let mut r = rng(31);
    let mut g = Graph::new();
    let mut reg = Registry::new();
    let vars = params.register(&mut g, &mut reg);
    let x = g.constant(Tensor::zeros(&[2, 8, 60]));
    let out = cnn_forward(&mut g, x, &mut params, &vars, Mode::Eval, &mut r).unwrap();
    assert_eq!(g.value(out).shape(), &[2, 7]);
    assert!(g.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn cnn_forward_rejects_wrong_grid() {
    let mut params = toy_cnn(8, 60, 32);
    let mut r = rng(33);
    let mut g = Graph::new();
    let mut reg = Registry::new();
    let vars = params.register(&mut g, &mut reg);
    let x = g.constant(Tensor::zeros(&[1, 8, 59]));
    let err = cnn_forward(&mut g, x, &mut params, &vars, Mode::Eval, &mut r).unwrap_err();
    assert!(err.to_string().contains("8 x 60"), "{err}");
}

#[test]
fn cnn_forward_gradient_check_toy_grid() {
    let mut params = toy_cnn(8, 60, 34);
    let mut r = rng(35);
    let x = rand_tensor(&mut r, &[2, 8, 60]);
    let coef = rand_tensor(&mut r, &[2, 7]);

    let mut tensors = vec![x];
    for b in &params.blocks {
        tensors.push(b.kernels.clone());
        tensors.push(b.gamma.clone());
        tensors.push(b.beta.clone());
    }
    tensors.push(params.proj_w.clone());
    tensors.push(params.proj_b.clone());

    let specs = params.specs.clone();
    let err = grad_check(
        |g, vars| {
            let mut params = CnnParams::init(specs.clone(), 8, 60, 7, &mut rng(0)).unwrap();
            let cvars = CnnVars {
                blocks: vec![
                    CnnBlockVars {
                        kernels: vars[1],
                        gamma: vars[2],
                        beta: vars[3],
                    },
                    CnnBlockVars {
                        kernels: vars[4],
                        gamma: vars[5],
                        beta: vars[6],
                    },
                ],
                proj_w: vars[7],
                proj_b: vars[8],
            };
            let mut drop_rng = rng(1);
            let out = cnn_forward(g, vars[0], &mut params, &cvars, Mode::Train, &mut drop_rng)?;
            let c = g.constant(coef.clone());
            let prod = g.mul(out, c)?;
            g.sum(prod)
        },
        &tensors,
        &GradCheckOptions {
            max_coords: 30,
            ..Default::default()
        },
        &mut r,
    )
    .unwrap();
    assert!(err < 1e-4, "cnn grad error {err}");
}

#[test]
fn cnn_features_survive_small_time_shift() {
    // An impulse well inside the grid, shifted by one frame: valid conv
    // responses shift with it and the global max pool sees the same set.
    let mut params = CnnParams::init(
        vec![CnnBlockSpec {
            out_channels: 3,
            kernel_len: 4,
            stride: 1,
            pool_window: 0,
            dropout_p: 0.0,
        }],
        4,
        40,
        6,
        &mut rng(36),
    )
    .unwrap();
    let mut features = Vec::new();
    for shift in [18usize, 19] {
        let mut x = Tensor::zeros(&[1, 4, 40]);
        for c in 0..4 {
            x.data_mut()[c * 40 + shift] = 1.0;
        }
        let mut r = rng(37);
        let mut g = Graph::new();
        let mut reg = Registry::new();
        let vars = params.register(&mut g, &mut reg);
        let xv = g.constant(x);
        let out = cnn_forward(&mut g, xv, &mut params, &vars, Mode::Eval, &mut r).unwrap();
        features.push(g.value(out).clone());
    }
    assert!(max_abs_diff(features[0].data(), features[1].data()) <= 1e-12);
}

// ---- fusion ----

#[test]
fn fusion_zero_head_is_uniform() {
    let params = FusionParams {
        w: Tensor::zeros(&[16, 9]),
        b: Tensor::zeros(&[16]),
    };
    let mut g = Graph::new();
    let mut reg = Registry::new();
    let vars = params.register(&mut g, &mut reg);
    let mut r = rng(38);
    let han = g.constant(rand_tensor(&mut r, &[4]));
    let cnn = g.constant(rand_tensor(&mut r, &[5]));
    let probs = fuse_classify(&mut g, han, cnn, &vars).unwrap();
    for &p in g.value(probs).data() {
        assert!((p - 1.0 / 16.0).abs() < 1e-12);
    }
}

#[test]
fn fusion_huge_bias_dominates() {
    let mut r = rng(39);
    let mut params = FusionParams::init(5, 7, &mut r);
    params.b.data_mut()[3] = 200.0;
    let mut g = Graph::new();
    let mut reg = Registry::new();
    let vars = params.register(&mut g, &mut reg);
    let han = g.constant(rand_tensor(&mut r, &[3]));
    let cnn = g.constant(rand_tensor(&mut r, &[4]));
    let probs = fuse_classify(&mut g, han, cnn, &vars).unwrap();
    assert!((g.value(probs).data()[3] - 1.0).abs() < 1e-12);
}

#[test]
fn fusion_matches_direct_formula() {
    let mut r = rng(40);
    let params = FusionParams::init(4, 6, &mut r);
    let han = rand_tensor(&mut r, &[2]);
    let cnn = rand_tensor(&mut r, &[4]);
    let mut g = Graph::new();
    let mut reg = Registry::new();
    let vars = params.register(&mut g, &mut reg);
    let (hv, cv) = (g.constant(han.clone()), g.constant(cnn.clone()));
    let probs = fuse_classify(&mut g, hv, cv, &vars).unwrap();

    let joined: Vec<f64> = han.data().iter().chain(cnn.data()).copied().collect();
    let logits: Vec<f64> = (0..4)
        .map(|c| {
            params.b.data()[c]
                + joined.iter().enumerate().map(|(j, v)| params.w.at2(c, j) * v).sum::<f64>()
        })
        .collect();
    let denom: f64 = logits.iter().map(|l| l.exp()).sum();
    for (got, l) in g.value(probs).data().iter().zip(&logits) {
        assert!((got - l.exp() / denom).abs() <= 1e-10);
    }
    let total: f64 = g.value(probs).data().iter().sum();
    assert!((total - 1.0).abs() < 1e-6);
}

#[test]
fn cross_entropy_perfect_prediction_is_zero() {
    let probs = Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.0]).unwrap();
    assert!(cross_entropy(&probs, &[1]).unwrap() < 1e-10);
}

#[test]
fn cross_entropy_half_probability_is_ln_two() {
    let probs = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
    let loss = cross_entropy(&probs, &[0]).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn cross_entropy_matches_summation_oracle() {
    let mut r = rng(41);
    for _ in 0..50 {
        let rows = 6;
        let classes = 4;
        let mut probs = Tensor::zeros(&[rows, classes]);
        for i in 0..rows {
            let raw: Vec<f64> = (0..classes).map(|_| r.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            for (j, v) in raw.iter().enumerate() {
                probs.data_mut()[i * classes + j] = v / total;
            }
        }
        let labels: Vec<usize> = (0..rows).map(|_| r.random_range(0..classes)).collect();
        let loss = cross_entropy(&probs, &labels).unwrap();
        let oracle = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -probs.at2(i, l).ln())
            .sum::<f64>()
            / rows as f64;
        assert!((loss - oracle).abs() <= 1e-12);
    }
}
