use super::Registry;
use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// Attention over a stack of hidden states: a learned tanh projection,
/// similarity against a context vector, masked softmax, and a weighted
/// sum of the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// Projection `[attn_dim x in_dim]`.
    pub w: Tensor,
    pub b: Tensor,
    /// Context vector `[attn_dim]` the projected states are scored against.
    pub context: Tensor,
}

impl AttentionParams {
    pub fn init(in_dim: usize, attn_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: super::glorot_init(rng, attn_dim, in_dim),
            b: Tensor::zeros(&[attn_dim]),
            context: super::uniform_init(rng, &[attn_dim], 0.1),
        }
    }

    pub fn register(&self, g: &mut Graph, reg: &mut Registry, prefix: &str) -> AttentionVars {
        AttentionVars {
            w: reg.leaf(g, format!("{prefix}.w"), &self.w, true),
            b: reg.leaf(g, format!("{prefix}.b"), &self.b, true),
            context: reg.leaf(g, format!("{prefix}.context"), &self.context, true),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, bool)) {
        f(&format!("{prefix}.w"), &mut self.w, true);
        f(&format!("{prefix}.b"), &mut self.b, true);
        f(&format!("{prefix}.context"), &mut self.context, true);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w: Var,
    pub b: Var,
    pub context: Var,
}

/// The weighted summary and the attention distribution that produced it.
pub struct AttentionOut {
    /// `[in_dim]` weighted sum of the input rows.
    pub summary: Var,
    /// `[n]` weights: nonnegative, zero on masked rows, summing to one.
    pub weights: Var,
}

/// Scores each row of `h: [n x in_dim]` against the context vector and
/// returns the attention-weighted sum.
pub fn attention(g: &mut Graph, h: Var, p: &AttentionVars, mask: &[bool]) -> Result<AttentionOut> {
    let projected = g.linear(h, p.w, Some(p.b))?;
    let u = g.tanh_act(projected)?;
    let scores = g.matvec(u, p.context)?;
    let weights = g.softmax(scores, Some(mask))?;
    let summary = g.vecmat(weights, h)?;
    Ok(AttentionOut { summary, weights })
}
