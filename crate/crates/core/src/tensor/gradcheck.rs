use super::graph::{Graph, Var};
use super::Tensor;
use crate::error::Result;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

/// Settings for [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Max coordinates sampled per parameter (0 = check all).
    pub max_coords: usize,
    /// Constant added to every analytic gradient before comparison.
    /// Zero in normal use; the gradcheck command's fault-injection hook
    /// sets it to verify the checker actually fails on a broken rule.
    pub perturb_analytic: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords: 0,
            perturb_analytic: 0.0,
        }
    }
}

/// Compares analytic gradients of a scalar-valued function against
/// central differences.
///
/// `build` must construct the function on the given graph from leaf
/// variables registered from `params` (in order) and return the scalar
/// output. It is called many times and must be deterministic: any
/// internal randomness (e.g. dropout masks) has to replay identically
/// per call.
///
/// Returns the maximum over checked coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(
    build: F,
    params: &[Tensor],
    opts: &GradCheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    // Analytic pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        let n = param.numel();
        let coords: Vec<usize> = if opts.max_coords == 0 || n <= opts.max_coords {
            (0..n).collect()
        } else {
            sample(rng, n, opts.max_coords).into_vec()
        };
        for ci in coords {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + opts.eps;
            let f_plus = eval(&work)?;
            work[pi].data_mut()[ci] = orig - opts.eps;
            let f_minus = eval(&work)?;
            work[pi].data_mut()[ci] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * opts.eps);
            let a = analytic[pi].data()[ci] + opts.perturb_analytic;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
