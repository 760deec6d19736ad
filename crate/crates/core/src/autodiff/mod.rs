//! Minimal reverse-mode automatic differentiation over `(C, H, W)` tensors.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{pixel_shuffle, pixel_unshuffle, ConvSpec, Gradients, Graph, KinkSignature, Padding, Var};
pub use tensor::{Scalar, Shape, Tensor};

use crate::error::{Error, Result};
use crate::guided::GuidedFilterParams;

/// Guided filter as a differentiable layer.
///
/// Builds the filter from box means and elementwise operations in the same
/// order as [`guided_filter`](crate::guided::guided_filter), so the forward
/// value matches it and gradients reach both `input` and `guidance`.
pub fn guided_filter_node<T: Scalar>(
    g: &mut Graph<T>,
    input: Var,
    guidance: Var,
    p: &GuidedFilterParams,
) -> Result<Var> {
    let (si, sm) = (g.shape(input), g.shape(guidance));
    if si != sm || si.channels != 1 {
        return Err(Error::contract(format!(
            "guided filter layer needs matching single-channel operands, got {si} and {sm}"
        )));
    }
    p.validate()?;
    let r = p.radius();
    // Statistics relative to the first guidance pixel; the output does not
    // depend on the shift, so treating it as a constant leaves gradients exact.
    let m0 = g.value(guidance).data()[0];
    let shifted = g.add_scalar(guidance, -m0);
    let mean_i = g.box_mean(input, r)?;
    let mean_ms = g.box_mean(shifted, r)?;
    let mi = g.mul(shifted, input)?;
    let mm = g.mul(shifted, shifted)?;
    let corr_mi = g.box_mean(mi, r)?;
    let corr_mm = g.box_mean(mm, r)?;
    let mean_ms_sq = g.mul(mean_ms, mean_ms)?;
    let var = g.sub(corr_mm, mean_ms_sq)?;
    let mean_mi = g.mul(mean_ms, mean_i)?;
    let cov = g.sub(corr_mi, mean_mi)?;
    let denom = g.add_scalar(var, T::from(p.epsilon).unwrap());
    let a = g.div(cov, denom)?;
    let mean_m = g.add_scalar(mean_ms, m0);
    let a_mean_m = g.mul(a, mean_m)?;
    let b = g.sub(mean_i, a_mean_m)?;
    let a_bar = g.box_mean(a, r)?;
    let b_bar = g.box_mean(b, r)?;
    let am = g.mul(a_bar, guidance)?;
    g.add(am, b_bar)
}
