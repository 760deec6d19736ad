//! Separable 2-D Daubechies D4 wavelet transform.
//!
//! The transform is periodized, which keeps it orthogonal: energy is
//! preserved and the inverse is the transpose. An odd-length axis is first
//! made even by repeating its last sample; the inverse crops it off again.

use crate::error::{Error, Result};
use crate::image::Image2D;

/// D4 low-pass analysis taps `[(1+√3), (3+√3), (3−√3), (1−√3)] / (4√2)`.
pub fn d4_lowpass() -> [f64; 4] {
    let s3 = 3f64.sqrt();
    let d = 4.0 * 2f64.sqrt();
    [(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
}

/// Quadrature-mirror high-pass taps `g[m] = (-1)^m h[3-m]`.
pub fn d4_highpass() -> [f64; 4] {
    let h = d4_lowpass();
    [h[3], -h[2], h[1], -h[0]]
}

/// One decomposition level. `width`/`height` are the dimensions of the image
/// this level was computed from, before any padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Subbands {
    pub width: usize,
    pub height: usize,
    /// Horizontal low-pass, vertical high-pass.
    pub lh: Image2D,
    /// Horizontal high-pass, vertical low-pass.
    pub hl: Image2D,
    pub hh: Image2D,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPyramid {
    /// Detail subbands, finest level first.
    pub details: Vec<Subbands>,
    /// Approximation at the coarsest level.
    pub ll: Image2D,
}

impl WaveletPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Sets every detail coefficient to zero.
    pub fn zero_details(&mut self) {
        for level in &mut self.details {
            for band in [&mut level.lh, &mut level.hl, &mut level.hh] {
                *band = Image2D::zeros(band.width(), band.height());
            }
        }
    }

    /// Sum of squared coefficients over all subbands.
    pub fn energy(&self) -> f64 {
        let sq = |img: &Image2D| img.pixels().iter().map(|v| v * v).sum::<f64>();
        sq(&self.ll)
            + self
                .details
                .iter()
                .map(|l| sq(&l.lh) + sq(&l.hl) + sq(&l.hh))
                .sum::<f64>()
    }
}

fn analyze_1d(x: &[f64], lo: &mut [f64], hi: &mut [f64]) {
    let n = x.len();
    let (h, g) = (d4_lowpass(), d4_highpass());
    for k in 0..n / 2 {
        let (mut a, mut d) = (0.0, 0.0);
        for m in 0..4 {
            let v = x[(2 * k + m) % n];
            a += h[m] * v;
            d += g[m] * v;
        }
        lo[k] = a;
        hi[k] = d;
    }
}

fn synthesize_1d(lo: &[f64], hi: &[f64], x: &mut [f64]) {
    let n = x.len();
    let (h, g) = (d4_lowpass(), d4_highpass());
    x.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..n / 2 {
        for m in 0..4 {
            x[(2 * k + m) % n] += h[m] * lo[k] + g[m] * hi[k];
        }
    }
}

/// Copies `image` into an even-sized buffer, repeating the last row/column.
fn pad_even(image: &Image2D) -> (Vec<f64>, usize, usize) {
    let (w, h) = image.dims();
    let (pw, ph) = (w + w % 2, h + h % 2);
    let mut buf = vec![0.0; pw * ph];
    for y in 0..ph {
        for x in 0..pw {
            buf[y * pw + x] = image.get(x.min(w - 1), y.min(h - 1));
        }
    }
    (buf, pw, ph)
}

fn split_level(image: &Image2D) -> (Image2D, Subbands) {
    let (w, h) = image.dims();
    let (buf, pw, ph) = pad_even(image);
    let (hw, hh) = (pw / 2, ph / 2);

    // rows: left half low-pass, right half high-pass
    let mut rows = vec![0.0; pw * ph];
    let (mut lo, mut hi) = (vec![0.0; hw], vec![0.0; hw]);
    for y in 0..ph {
        analyze_1d(&buf[y * pw..(y + 1) * pw], &mut lo, &mut hi);
        rows[y * pw..y * pw + hw].copy_from_slice(&lo);
        rows[y * pw + hw..(y + 1) * pw].copy_from_slice(&hi);
    }
    let mut out = vec![0.0; pw * ph];
    let mut col = vec![0.0; ph];
    let (mut clo, mut chi) = (vec![0.0; hh], vec![0.0; hh]);
    for x in 0..pw {
        for y in 0..ph {
            col[y] = rows[y * pw + x];
        }
        analyze_1d(&col, &mut clo, &mut chi);
        for y in 0..hh {
            out[y * pw + x] = clo[y];
            out[(y + hh) * pw + x] = chi[y];
        }
    }
    let band = |x0: usize, y0: usize| {
        Image2D::from_fn(hw, hh, |x, y| out[(y0 + y) * pw + x0 + x])
    };
    (
        band(0, 0),
        Subbands {
            width: w,
            height: h,
            lh: band(0, hh),
            hl: band(hw, 0),
            hh: band(hw, hh),
        },
    )
}

fn merge_level(ll: &Image2D, level: &Subbands) -> Result<Image2D> {
    let (hw, hh) = ll.dims();
    for band in [&level.lh, &level.hl, &level.hh] {
        if band.dims() != (hw, hh) {
            return Err(Error::contract("subband dimensions disagree"));
        }
    }
    if (level.width + 1) / 2 != hw || (level.height + 1) / 2 != hh {
        return Err(Error::contract("subband dimensions disagree with level size"));
    }
    let (pw, ph) = (2 * hw, 2 * hh);
    let mut rows = vec![0.0; pw * ph];
    let (mut clo, mut chi) = (vec![0.0; hh], vec![0.0; hh]);
    let mut col = vec![0.0; ph];
    for x in 0..pw {
        let (low_band, high_band, bx) = if x < hw {
            (ll, &level.lh, x)
        } else {
            (&level.hl, &level.hh, x - hw)
        };
        for y in 0..hh {
            clo[y] = low_band.get(bx, y);
            chi[y] = high_band.get(bx, y);
        }
        synthesize_1d(&clo, &chi, &mut col);
        for y in 0..ph {
            rows[y * pw + x] = col[y];
        }
    }
    let mut row = vec![0.0; pw];
    let mut out = vec![0.0; level.width * level.height];
    for y in 0..ph {
        let r = &rows[y * pw..(y + 1) * pw];
        synthesize_1d(&r[..hw], &r[hw..], &mut row);
        if y < level.height {
            out[y * level.width..(y + 1) * level.width].copy_from_slice(&row[..level.width]);
        }
    }
    Image2D::new(level.width, level.height, out)
}

/// `levels`-fold 2-D decomposition.
pub fn dwt2(image: &Image2D, levels: usize) -> Result<WaveletPyramid> {
    if levels == 0 {
        return Err(Error::contract("dwt2 needs at least one level"));
    }
    let mut ll = image.clone();
    let mut details = Vec::with_capacity(levels);
    for level in 0..levels {
        if ll.width() < 2 || ll.height() < 2 {
            return Err(Error::contract(format!(
                "{}x{} image too small for {levels} decomposition levels (failed at level {})",
                image.width(),
                image.height(),
                level + 1
            )));
        }
        let (next, bands) = split_level(&ll);
        details.push(bands);
        ll = next;
    }
    Ok(WaveletPyramid { details, ll })
}

pub fn idwt2(pyramid: &WaveletPyramid) -> Result<Image2D> {
    let mut ll = pyramid.ll.clone();
    for level in pyramid.details.iter().rev() {
        ll = merge_level(&ll, level)?;
    }
    Ok(ll)
}

/// Reconstruction from the approximation band alone.
pub fn lowpass_reconstruction(image: &Image2D, levels: usize) -> Result<Image2D> {
    let mut pyr = dwt2(image, levels)?;
    pyr.zero_details();
    idwt2(&pyr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_are_orthonormal() {
        let h = d4_lowpass();
        assert!((h.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((h[0] * h[2] + h[1] * h[3]).abs() < 1e-15);
        assert!((h.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_image_has_no_detail() {
        let img = Image2D::filled(32, 24, 0.7);
        let pyr = dwt2(&img, 2).unwrap();
        for level in &pyr.details {
            for band in [&level.lh, &level.hl, &level.hh] {
                assert!(band.pixels().iter().all(|v| v.abs() < 1e-12));
            }
        }
        // DC gain sqrt(2) per axis, two axes, two levels
        assert!(pyr.ll.pixels().iter().all(|v| (v - 4.0 * 0.7).abs() < 1e-12));
    }

    #[test]
    fn odd_sizes_reconstruct() {
        let img = Image2D::from_fn(13, 7, |x, y| ((x * 5 + y * 3) % 7) as f64 * 0.1);
        let pyr = dwt2(&img, 2).unwrap();
        assert_eq!(pyr.details[0].lh.dims(), (7, 4));
        assert_eq!(pyr.ll.dims(), (4, 2));
        assert!(idwt2(&pyr).unwrap().max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn too_small() {
        assert!(dwt2(&Image2D::zeros(2, 2), 2).is_err());
        assert!(dwt2(&Image2D::zeros(4, 4), 2).is_ok());
        assert!(dwt2(&Image2D::zeros(4, 4), 0).is_err());
    }
}
