//! Filters a noisy phantom with its clean counterpart as guidance and reports
//! how the radius trades noise for structure.

use deepgf::degrade::{apply_noise, NoiseSpec};
use deepgf::guided::{guided_filter, GuidedFilterParams};
use deepgf::metrics::{mae_masked, ssim_masked};
use deepgf::phantom::{make_phantom, PhantomSpec};

fn main() -> deepgf::Result<()> {
    let (a, b, mask) = make_phantom(&PhantomSpec::default().with_seed(3))?;
    let noisy = apply_noise(&a, &NoiseSpec::gaussian(0.1, 1))?;
    println!("noisy       ssim {:.4}  mae {:.4}", ssim_masked(&noisy, &a, &mask)?, mae_masked(&noisy, &a, &mask)?);
    for r in [1, 2, 4, 8] {
        for eps in [1e-4, 1e-2] {
            let out = guided_filter(&noisy, &b, &GuidedFilterParams::new(r, eps))?;
            println!(
                "r={r:<2} eps={eps:<6} ssim {:.4}  mae {:.4}",
                ssim_masked(&out, &a, &mask)?,
                mae_masked(&out, &a, &mask)?
            );
        }
    }
    Ok(())
}
