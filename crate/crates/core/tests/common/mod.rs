//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use deepgf::image::Image2D;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(w: usize, h: usize, seed: u64) -> Image2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image2D::from_fn(w, h, |_, _| rng.random::<f64>())
}

/// In-bounds pixel coordinates of the window centred on `(cx, cy)`.
fn window(cx: usize, cy: usize, r: usize, w: usize, h: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in cy.saturating_sub(r)..=(cy + r).min(h - 1) {
        for x in cx.saturating_sub(r)..=(cx + r).min(w - 1) {
            out.push((x, y));
        }
    }
    out
}

/// Per-window least-squares fit `input ~ a * guide + b`, statistics taken
/// literally over the window's pixels.
pub fn guided_coefficients_bruteforce(input: &Image2D, guide: &Image2D, r: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = input.dims();
    let mut a = vec![0.0; w * h];
    let mut b = vec![0.0; w * h];
    for cy in 0..h {
        for cx in 0..w {
            let px = window(cx, cy, r, w, h);
            let n = px.len() as f64;
            let mu = px.iter().map(|&(x, y)| guide.get(x, y)).sum::<f64>() / n;
            let ibar = px.iter().map(|&(x, y)| input.get(x, y)).sum::<f64>() / n;
            let var = px.iter().map(|&(x, y)| (guide.get(x, y) - mu).powi(2)).sum::<f64>() / n;
            let cov = px
                .iter()
                .map(|&(x, y)| (guide.get(x, y) - mu) * (input.get(x, y) - ibar))
                .sum::<f64>()
                / n;
            let ak = cov / (var + eps);
            a[cy * w + cx] = ak;
            b[cy * w + cx] = ibar - ak * mu;
        }
    }
    (a, b)
}

/// Guided filter evaluated window by window: every pixel averages the
/// coefficients of the windows that contain it.
pub fn guided_filter_bruteforce(input: &Image2D, guide: &Image2D, r: usize, eps: f64) -> Image2D {
    let (w, h) = input.dims();
    let (a, b) = guided_coefficients_bruteforce(input, guide, r, eps);
    Image2D::from_fn(w, h, |x, y| {
        // windows containing (x, y) are centred within distance r
        let ks = window(x, y, r, w, h);
        let n = ks.len() as f64;
        let abar = ks.iter().map(|&(kx, ky)| a[ky * w + kx]).sum::<f64>() / n;
        let bbar = ks.iter().map(|&(kx, ky)| b[ky * w + kx]).sum::<f64>() / n;
        abar * guide.get(x, y) + bbar
    })
}

/// Mean over each clipped window, by direct summation.
pub fn box_mean_direct(img: &Image2D, r: usize) -> Image2D {
    let (w, h) = img.dims();
    Image2D::from_fn(w, h, |cx, cy| {
        let px = window(cx, cy, r, w, h);
        px.iter().map(|&(x, y)| img.get(x, y)).sum::<f64>() / px.len() as f64
    })
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Direct 2-D convolution (cross-correlation) with zero padding `pad`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_direct(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let cout = bias.len();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = bias[co];
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                s += weight[((co * cin + ci) * k + ky) * k + kx]
                                    * x[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = s;
            }
        }
    }
    (out, oh, ow)
}

/// Sobel gradient magnitude from explicit 3x3 kernels, replicated borders,
/// normalized by the kernel's total absolute weight (8).
pub fn sobel_direct(img: &Image2D) -> Image2D {
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let (w, h) = img.dims();
    Image2D::from_fn(w, h, |x, y| {
        let (mut gx, mut gy) = (0.0, 0.0);
        for (j, row) in KX.iter().enumerate() {
            for (i, &k) in row.iter().enumerate() {
                let sx = (x + i).saturating_sub(1).min(w - 1);
                let sy = (y + j).saturating_sub(1).min(h - 1);
                gx += k * img.get(sx, sy);
                // transpose of KX
                gy += KX[i][j] * img.get(sx, sy);
            }
        }
        (gx * gx + gy * gy).sqrt() / 8.0
    })
}
