use super::Registry;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// One direction of a gated recurrent unit.
///
/// Gate rows are stacked `[reset; update; candidate]` in the `[3h x d]`
/// input matrix and `[3h x h]` hidden matrix. The recurrence is the
/// standard reset/update formulation:
///
/// ```text
/// r = sigma(W_r x + U_r h + b_r)
/// z = sigma(W_z x + U_z h + b_z)
/// n = tanh(W_n x + U_n (r o h) + b_n)
/// h' = (1 - z) o h + z o n
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
    pub hidden: usize,
}

impl GruParams {
    pub fn init(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w_input: super::glorot_init(rng, 3 * hidden, input_dim),
            w_hidden: super::glorot_init(rng, 3 * hidden, hidden),
            bias: Tensor::zeros(&[3 * hidden]),
            hidden,
        }
    }

    pub fn register(&self, g: &mut Graph, reg: &mut Registry, prefix: &str) -> GruVars {
        GruVars {
            w_input: reg.leaf(g, format!("{prefix}.w_input"), &self.w_input, true),
            w_hidden: reg.leaf(g, format!("{prefix}.w_hidden"), &self.w_hidden, true),
            bias: reg.leaf(g, format!("{prefix}.bias"), &self.bias, true),
            hidden: self.hidden,
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, bool)) {
        f(&format!("{prefix}.w_input"), &mut self.w_input, true);
        f(&format!("{prefix}.w_hidden"), &mut self.w_hidden, true);
        f(&format!("{prefix}.bias"), &mut self.bias, true);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
    pub hidden: usize,
}

/// One recurrence step: `x_t` is `[d]`, `h_prev` is `[h]`.
pub fn gru_cell(g: &mut Graph, x_t: Var, h_prev: Var, p: &GruVars) -> Result<Var> {
    let h = p.hidden;
    if g.value(h_prev).shape() != [h] {
        return Err(Error::Shape {
            op: "gru_cell",
            detail: format!("hidden state {:?}, expected [{h}]", g.value(h_prev).shape()),
        });
    }
    let gx = g.linear(x_t, p.w_input, Some(p.bias))?; // [3h]
    let u_r = g.slice0(p.w_hidden, 0, h)?;
    let u_z = g.slice0(p.w_hidden, h, 2 * h)?;
    let u_n = g.slice0(p.w_hidden, 2 * h, 3 * h)?;

    let rx = g.slice0(gx, 0, h)?;
    let rh = g.linear(h_prev, u_r, None)?;
    let r_pre = g.add(rx, rh)?;
    let r = g.sigmoid(r_pre)?;

    let zx = g.slice0(gx, h, 2 * h)?;
    let zh = g.linear(h_prev, u_z, None)?;
    let z_pre = g.add(zx, zh)?;
    let z = g.sigmoid(z_pre)?;

    let nx = g.slice0(gx, 2 * h, 3 * h)?;
    let gated = g.mul(r, h_prev)?;
    let nh = g.linear(gated, u_n, None)?;
    let n_pre = g.add(nx, nh)?;
    let n = g.tanh_act(n_pre)?;

    // (1 - z) o h + z o n, written as h + z o (n - h).
    let delta = g.sub(n, h_prev)?;
    let step = g.mul(z, delta)?;
    g.add(h_prev, step)
}

/// Bidirectional GRU over a `[len x d]` sequence.
///
/// Masked steps carry each direction's hidden state through unchanged
/// and emit it as-is (downstream attention masks those rows out).
/// Outputs are `[h_fwd ; h_bwd]` per step, giving `[len x 2h]`.
pub fn bigru(g: &mut Graph, seq: Var, mask: &[bool], fwd: &GruVars, bwd: &GruVars) -> Result<Var> {
    let shape = g.value(seq).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::Shape {
            op: "bigru",
            detail: format!("sequence must be [len x d], got {shape:?}"),
        });
    }
    let (len, dim) = (shape[0], shape[1]);
    if mask.len() != len {
        return Err(Error::Shape {
            op: "bigru",
            detail: format!("mask of {} steps vs sequence of {len}", mask.len()),
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Param {
            op: "bigru",
            detail: "every step is masked".into(),
        });
    }
    let h = fwd.hidden;
    let zero_h = g.constant(Tensor::zeros(&[h]));

    let step_input = |g: &mut Graph, t: usize| -> Result<Var> {
        let row = g.slice0(seq, t, t + 1)?;
        g.reshape(row, vec![dim])
    };

    let mut fwd_states = Vec::with_capacity(len);
    let mut state = zero_h;
    for t in 0..len {
        if mask[t] {
            let x_t = step_input(g, t)?;
            state = gru_cell(g, x_t, state, fwd)?;
        }
        // Masked steps emit the carried state unchanged.
        fwd_states.push(state);
    }

    let mut bwd_states = vec![zero_h; len];
    state = zero_h;
    for t in (0..len).rev() {
        if mask[t] {
            let x_t = step_input(g, t)?;
            state = gru_cell(g, x_t, state, bwd)?;
        }
        bwd_states[t] = state;
    }

    let rows: Vec<Var> = (0..len)
        .map(|t| g.concat(fwd_states[t], bwd_states[t]))
        .collect::<Result<_>>()?;
    g.stack_rows(&rows)
}
