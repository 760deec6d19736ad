//! Central-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Coordinates checked per input tensor; `None` checks all of them.
    pub max_coords_per_input: Option<usize>,
    /// Seed for the coordinate subsample.
    pub seed: u64,
    /// Lower bound on the relative-error denominator. Raise it when some
    /// gradients are exactly zero (dead units) and roundoff would dominate.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            max_coords_per_input: Some(24),
            seed: 0,
            floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_relative_error: f64,
    /// Index of the input holding the worst coordinate, and the coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates whose `±h` probes cross a ReLU/abs kink.
    pub skipped: usize,
}

/// Compares reverse-mode gradients of `build` with central differences.
///
/// `build` receives a fresh graph and one leaf per entry of `inputs` and
/// returns an output node of any shape. The checked scalar is the sum of that
/// output; the numeric derivative differences the two perturbed outputs
/// elementwise before summing, which keeps cancellation error low.
pub fn grad_check<F>(build: F, inputs: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &leaves)?;
        if !g.value(out).is_finite() {
            return Err(Error::numerical("grad_check: non-finite forward value"));
        }
        Ok((g, leaves, out))
    };

    let (g, leaves, out) = eval(inputs)?;
    let seed = Tensor::filled(g.shape(out), 1.0);
    let grads = g.backward_with(out, seed)?;
    let analytic: Vec<Tensor<f64>> = leaves
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get_or_zeros(*v, t.shape()))
        .collect();
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    for (ti, tensor) in inputs.iter().enumerate() {
        let n = tensor.numel();
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for idx in coords {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[idx] += opts.h;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[idx] -= opts.h;
            let (gp, _, op) = eval(&plus)?;
            let (gm, _, om) = eval(&minus)?;
            if gp.kink_signature() != gm.kink_signature() {
                report.skipped += 1;
                continue;
            }
            let diff: f64 = gp
                .value(op)
                .data()
                .iter()
                .zip(gm.value(om).data())
                .map(|(a, b)| a - b)
                .sum();
            let numeric = diff / (2.0 * opts.h);
            let a = analytic[ti].data()[idx];
            if !numeric.is_finite() {
                return Err(Error::numerical(format!(
                    "grad_check: non-finite numeric derivative at input {ti}[{idx}]"
                )));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((ti, idx));
            }
        }
    }
    Ok(report)
}
