//! Checks tape gradients of a guided filter layer against central differences.

use deepgf::autodiff::{grad_check, guided_filter_node, GradCheckOptions, Tensor};
use deepgf::guided::GuidedFilterParams;
use deepgf::phantom::{make_phantom, PhantomSpec};

fn main() -> deepgf::Result<()> {
    let (a, b, _) = make_phantom(&PhantomSpec { size: 32, ..PhantomSpec::default() })?;
    let inputs = [Tensor::from_image(&a), Tensor::from_image(&b)];
    let params = GuidedFilterParams::new(3, 1e-3);
    let report = grad_check(
        |g, v| {
            let p = guided_filter_node(g, v[0], v[1], &params)?;
            Ok(g.square(p))
        },
        &inputs,
        &GradCheckOptions { max_coords_per_input: Some(64), ..Default::default() },
    )?;
    println!("{report:?}");
    Ok(())
}
