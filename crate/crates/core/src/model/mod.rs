//! Model components: the spectrogram CNN branch, the two-level lyric
//! attention branch, and the fusion classifier head.
//!
//! Parameters live in plain tensors; each training or inference pass
//! registers them on a fresh [`Graph`](crate::tensor::Graph) and builds
//! the forward computation there.

mod attention;
mod cnn;
mod fusion;
mod gru;
mod han;

pub use attention::{attention, AttentionOut, AttentionParams, AttentionVars};
pub use cnn::{
    cnn_block, cnn_forward, CnnBlockParams, CnnBlockSpec, CnnBlockVars, CnnParams, CnnVars,
    BN_EPS, BN_MOMENTUM,
};
pub use fusion::{cross_entropy, fuse_classify, fused_logits, FusionParams, FusionVars};
pub use gru::{bigru, gru_cell, GruParams, GruVars};
pub use han::{han_forward, HanOutput, HanParams, HanVars};

use crate::tensor::{Graph, Tensor, Var};
use crate::text::EmbeddingMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree by construction")
}

/// Uniform(+-sqrt(6 / (fan_in + fan_out))) for a `[rows x cols]` matrix.
pub(crate) fn glorot_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    uniform_init(rng, &[rows, cols], bound)
}

/// A parameter tensor registered on a graph, tracked by name so the
/// optimizer and checkpoints address gradients consistently.
#[derive(Debug, Clone)]
pub struct NamedVar {
    pub name: String,
    pub var: Var,
    pub trainable: bool,
}

/// Collects (name, var) pairs while parameters are registered on a graph.
#[derive(Default)]
pub struct Registry {
    pub named: Vec<NamedVar>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn leaf(&mut self, g: &mut Graph, name: impl Into<String>, t: &Tensor, trainable: bool) -> Var {
        let var = g.leaf(t.clone(), trainable);
        self.named.push(NamedVar {
            name: name.into(),
            var,
            trainable,
        });
        var
    }
}

/// Every learnable tensor of the full multimodal model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedding: EmbeddingMatrix,
    pub cnn: CnnParams,
    pub han: HanParams,
    pub fusion: FusionParams,
}

/// Graph handles for one registered pass over [`ModelParams`].
pub struct ModelVars {
    pub embedding: Var,
    pub cnn: CnnVars,
    pub han: HanVars,
    pub fusion: FusionVars,
}

impl ModelParams {
    /// Registers every parameter as a graph leaf and returns both the
    /// structured handles and the flat named list (in registration
    /// order, the canonical parameter order).
    pub fn register(&self, g: &mut Graph) -> (ModelVars, Vec<NamedVar>) {
        let mut reg = Registry::new();
        let embedding = reg.leaf(g, "embedding", &self.embedding.weights, self.embedding.trainable);
        let cnn = self.cnn.register(g, &mut reg);
        let han = self.han.register(g, &mut reg);
        let fusion = self.fusion.register(g, &mut reg);
        (
            ModelVars {
                embedding,
                cnn,
                han,
                fusion,
            },
            reg.named,
        )
    }

    /// Visits every parameter tensor mutably, in canonical order, with
    /// its name and trainability.
    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, bool)) {
        let emb_trainable = self.embedding.trainable;
        f("embedding", &mut self.embedding.weights, emb_trainable);
        self.cnn.for_each_mut(f);
        self.han.for_each_mut(f);
        self.fusion.for_each_mut(f);
    }

    /// Batchnorm running statistics: buffers saved in checkpoints but
    /// never touched by the optimizer, as (name, values) pairs.
    pub fn buffers(&self) -> Vec<(String, Vec<f64>)> {
        self.cnn.buffers()
    }

    pub fn set_buffer(&mut self, name: &str, values: &[f64]) -> bool {
        self.cnn.set_buffer(name, values)
    }

    /// True when every parameter value is finite.
    pub fn all_finite(&mut self) -> bool {
        let mut ok = true;
        self.for_each_mut(&mut |_, t, _| {
            if !t.is_finite() {
                ok = false;
            }
        });
        ok
    }
}

#[cfg(test)]
mod tests;
