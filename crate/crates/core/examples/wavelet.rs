//! Two-level D4 decomposition of a phantom: band energies and reconstruction.

use deepgf::phantom::{make_phantom, PhantomSpec};
use deepgf::wavelet::{dwt2, idwt2};

fn energy(img: &deepgf::image::Image2D) -> f64 {
    img.pixels().iter().map(|v| v * v).sum()
}

fn main() -> deepgf::Result<()> {
    let (a, _, _) = make_phantom(&PhantomSpec::default())?;
    let pyr = dwt2(&a, 2)?;
    println!("image energy {:.3}", energy(&a));
    println!("approx       {:.3}", energy(&pyr.ll));
    for (k, d) in pyr.details.iter().enumerate() {
        println!("level {} lh {:.3} hl {:.3} hh {:.3}", k + 1, energy(&d.lh), energy(&d.hl), energy(&d.hh));
    }
    println!("reconstruction error {:.1e}", idwt2(&pyr)?.max_abs_diff(&a));
    Ok(())
}
