use super::Registry;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// The shared classifier head over the concatenated branch features.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    /// `[classes x (lyric_dim + audio_dim)]`.
    pub w: Tensor,
    pub b: Tensor,
}

impl FusionParams {
    pub fn init(classes: usize, features: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: super::glorot_init(rng, classes, features),
            b: Tensor::zeros(&[classes]),
        }
    }

    pub fn classes(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn register(&self, g: &mut Graph, reg: &mut Registry) -> FusionVars {
        FusionVars {
            w: reg.leaf(g, "fusion.w", &self.w, true),
            b: reg.leaf(g, "fusion.b", &self.b, true),
        }
    }

    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, bool)) {
        f("fusion.w", &mut self.w, true);
        f("fusion.b", &mut self.b, true);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub w: Var,
    pub b: Var,
}

/// Pre-softmax class scores for a batch: `[b x lyric_dim]` and
/// `[b x audio_dim]` concatenated (lyrics first) through the head.
pub fn fused_logits(g: &mut Graph, han_batch: Var, cnn_batch: Var, p: &FusionVars) -> Result<Var> {
    let joined = g.concat(han_batch, cnn_batch)?;
    g.linear(joined, p.w, Some(p.b))
}

/// Class probabilities for one sample: softmax over the fused head.
pub fn fuse_classify(g: &mut Graph, han_vec: Var, cnn_vec: Var, p: &FusionVars) -> Result<Var> {
    let joined = g.concat(han_vec, cnn_vec)?;
    let logits = g.linear(joined, p.w, Some(p.b))?;
    g.softmax(logits, None)
}

/// Mean negative log-likelihood of the true classes under already
/// normalized probability rows, with the probability clamped at 1e-12
/// before the log. This is the evaluation-side loss; training uses the
/// fused softmax/cross-entropy graph op.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if probs.rank() != 2 || probs.shape()[0] != labels.len() {
        return Err(Error::Shape {
            op: "cross_entropy",
            detail: format!("probs {:?} vs {} labels", probs.shape(), labels.len()),
        });
    }
    let classes = probs.shape()[1];
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Param {
                op: "cross_entropy",
                detail: format!("label {label} out of range for {classes} classes"),
            });
        }
        total -= probs.at2(r, label).max(1e-12).ln();
    }
    Ok(total / labels.len() as f64)
}
