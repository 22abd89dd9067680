use super::Registry;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Mode, RunningStats, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Shape of one conv block: convolution with 1-D kernels along time,
/// batch normalization, ReLU, optional max pooling, then dropout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnnBlockSpec {
    pub out_channels: usize,
    pub kernel_len: usize,
    pub stride: usize,
    /// 0 disables pooling; otherwise the pool stride equals the window.
    pub pool_window: usize,
    pub dropout_p: f64,
}

impl CnnBlockSpec {
    /// The default stack: mel bands as input channels, four blocks
    /// narrowing time down to a handful of frames, dropout after each
    /// pooled block.
    pub fn default_stack() -> Vec<CnnBlockSpec> {
        let block = |out_channels, kernel_len, pool_window, dropout_p| CnnBlockSpec {
            out_channels,
            kernel_len,
            stride: 1,
            pool_window,
            dropout_p,
        };
        vec![
            block(256, 8, 4, 0.5),
            block(256, 8, 4, 0.5),
            block(384, 4, 4, 0.5),
            block(500, 4, 0, 0.0),
        ]
    }
}

/// Learnable state of one block.
///
/// The convolution carries no bias: batch normalization follows it and
/// cancels any per-channel shift exactly, so `beta` is the block's only
/// offset.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnBlockParams {
    pub kernels: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub stats: RunningStats,
}

impl CnnBlockParams {
    fn init(in_channels: usize, spec: &CnnBlockSpec, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (in_channels * spec.kernel_len) as f64;
        let bound = (6.0 / fan_in).sqrt();
        Self {
            kernels: super::uniform_init(rng, &[spec.out_channels, in_channels, spec.kernel_len], bound),
            gamma: Tensor::full(&[spec.out_channels], 1.0),
            beta: Tensor::zeros(&[spec.out_channels]),
            stats: RunningStats::new(spec.out_channels),
        }
    }
}

/// The spectrogram branch: a chain of conv blocks, a global max pool
/// over whatever time axis remains, and a linear projection to the
/// feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    pub specs: Vec<CnnBlockSpec>,
    pub blocks: Vec<CnnBlockParams>,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    pub grid_mels: usize,
    pub grid_frames: usize,
    pub features: usize,
}

impl CnnParams {
    /// Validates that the block chain is shape-consistent from the input
    /// grid down to the projection, then initializes parameters.
    pub fn init(
        specs: Vec<CnnBlockSpec>,
        grid_mels: usize,
        grid_frames: usize,
        features: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("cnn stack needs at least one block".into()));
        }
        let mut t = grid_frames;
        let mut c = grid_mels;
        for (i, spec) in specs.iter().enumerate() {
            if spec.kernel_len == 0 || spec.stride == 0 || spec.out_channels == 0 {
                return Err(Error::Config(format!(
                    "cnn block {i}: kernel_len, stride, and out_channels must be positive"
                )));
            }
            if !(0.0..1.0).contains(&spec.dropout_p) {
                return Err(Error::Config(format!(
                    "cnn block {i}: dropout_p {} outside [0, 1)",
                    spec.dropout_p
                )));
            }
            if spec.kernel_len > t {
                return Err(Error::Config(format!(
                    "cnn block {i}: kernel {} longer than remaining {t} frames",
                    spec.kernel_len
                )));
            }
            t = (t - spec.kernel_len) / spec.stride + 1;
            if spec.pool_window > 0 {
                if spec.pool_window > t {
                    return Err(Error::Config(format!(
                        "cnn block {i}: pool window {} larger than remaining {t} frames",
                        spec.pool_window
                    )));
                }
                t = (t - spec.pool_window) / spec.pool_window + 1;
            }
            c = spec.out_channels;
        }
        let mut blocks = Vec::with_capacity(specs.len());
        let mut in_ch = grid_mels;
        for spec in &specs {
            blocks.push(CnnBlockParams::init(in_ch, spec, rng));
            in_ch = spec.out_channels;
        }
        Ok(Self {
            proj_w: super::glorot_init(rng, features, c),
            proj_b: Tensor::zeros(&[features]),
            specs,
            blocks,
            grid_mels,
            grid_frames,
            features,
        })
    }

    pub fn register(&self, g: &mut Graph, reg: &mut Registry) -> CnnVars {
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| CnnBlockVars {
                kernels: reg.leaf(g, format!("cnn.block{i}.kernels"), &b.kernels, true),
                gamma: reg.leaf(g, format!("cnn.block{i}.gamma"), &b.gamma, true),
                beta: reg.leaf(g, format!("cnn.block{i}.beta"), &b.beta, true),
            })
            .collect();
        CnnVars {
            blocks,
            proj_w: reg.leaf(g, "cnn.proj.w", &self.proj_w, true),
            proj_b: reg.leaf(g, "cnn.proj.b", &self.proj_b, true),
        }
    }

    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, bool)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(&format!("cnn.block{i}.kernels"), &mut b.kernels, true);
            f(&format!("cnn.block{i}.gamma"), &mut b.gamma, true);
            f(&format!("cnn.block{i}.beta"), &mut b.beta, true);
        }
        f("cnn.proj.w", &mut self.proj_w, true);
        f("cnn.proj.b", &mut self.proj_b, true);
    }

    pub fn buffers(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("cnn.block{i}.running_mean"), b.stats.mean.clone()));
            out.push((format!("cnn.block{i}.running_var"), b.stats.var.clone()));
        }
        out
    }

    pub fn set_buffer(&mut self, name: &str, values: &[f64]) -> bool {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            if name == format!("cnn.block{i}.running_mean") && values.len() == b.stats.mean.len() {
                b.stats.mean.copy_from_slice(values);
                return true;
            }
            if name == format!("cnn.block{i}.running_var") && values.len() == b.stats.var.len() {
                b.stats.var.copy_from_slice(values);
                return true;
            }
        }
        false
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CnnBlockVars {
    pub kernels: Var,
    pub gamma: Var,
    pub beta: Var,
}

#[derive(Debug, Clone)]
pub struct CnnVars {
    pub blocks: Vec<CnnBlockVars>,
    pub proj_w: Var,
    pub proj_b: Var,
}

/// conv -> batchnorm -> relu -> (pool) -> dropout.
pub fn cnn_block(
    g: &mut Graph,
    x: Var,
    spec: &CnnBlockSpec,
    vars: &CnnBlockVars,
    stats: &mut RunningStats,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let conv = g.conv_time(x, vars.kernels, None, spec.stride)?;
    let normed = g.batchnorm(conv, vars.gamma, vars.beta, stats, mode, BN_EPS, BN_MOMENTUM)?;
    let active = g.relu(normed)?;
    let pooled = if spec.pool_window > 0 {
        g.maxpool_time(active, spec.pool_window, spec.pool_window)?
    } else {
        active
    };
    if spec.dropout_p > 0.0 {
        g.dropout(pooled, spec.dropout_p, rng, mode)
    } else {
        Ok(pooled)
    }
}

/// Runs the block stack over a `[batch x mels x frames]` spectrogram
/// batch, global-max-pools the remaining time axis, and projects to the
/// feature vector, giving `[batch x features]`.
pub fn cnn_forward(
    g: &mut Graph,
    x: Var,
    params: &mut CnnParams,
    vars: &CnnVars,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 3 || shape[1] != params.grid_mels || shape[2] != params.grid_frames {
        return Err(Error::Shape {
            op: "cnn_forward",
            detail: format!(
                "input {shape:?}, expected [batch x {} x {}]",
                params.grid_mels, params.grid_frames
            ),
        });
    }
    let batch = shape[0];
    let mut h = x;
    for (i, spec) in params.specs.iter().enumerate() {
        h = cnn_block(g, h, spec, &vars.blocks[i], &mut params.blocks[i].stats, mode, rng)?;
    }
    let t_left = g.value(h).shape()[2];
    let pooled = g.maxpool_time(h, t_left, t_left)?; // [b x c x 1]
    let channels = g.value(pooled).shape()[1];
    let flat = g.reshape(pooled, vec![batch, channels])?;
    g.linear(flat, vars.proj_w, Some(vars.proj_b))
}
