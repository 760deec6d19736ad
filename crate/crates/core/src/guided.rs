//! Locally linear guided image filter.
//!
//! Within each window `w_k` the output is modelled as `P = a_k * M + b_k`,
//! with `(a_k, b_k)` the least-squares fit of the input `I` against the
//! guidance `M` regularized by `epsilon`. Every pixel is covered by several
//! windows; the final output averages their coefficients:
//! `P = mean(a) * M + mean(b)`.
//!
//! All window statistics go through [`box_mean`](crate::boxfilter::box_mean),
//! so the whole filter is `O(N)` in the pixel count regardless of radius.

use crate::boxfilter::{box_mean_plane, WindowSpec};
use crate::error::{Error, Result};
use crate::image::Image2D;

/// Window radius and regularizer of the guided filter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidedFilterParams {
    pub window: WindowSpec,
    /// Regularizer added to the local guidance variance (intensity^2 units).
    pub epsilon: f64,
}

impl GuidedFilterParams {
    pub fn new(radius: usize, epsilon: f64) -> Self {
        Self {
            window: WindowSpec::new(radius),
            epsilon,
        }
    }

    pub fn radius(&self) -> usize {
        self.window.radius
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!(
                "guided filter epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

impl Default for GuidedFilterParams {
    /// `r = 2`, `epsilon = 1e-4`.
    fn default() -> Self {
        Self::new(2, 1e-4)
    }
}

/// Per-window coefficients and their window averages.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMaps {
    pub a: Image2D,
    pub b: Image2D,
    pub a_bar: Image2D,
    pub b_bar: Image2D,
}

fn check_inputs(input: &Image2D, guidance: &Image2D, p: &GuidedFilterParams) -> Result<()> {
    input.ensure_same_dims(guidance, "guided filter input vs guidance")?;
    p.validate()?;
    p.window.check(input.width(), input.height())
}

/// Raw-plane implementation shared with the differentiable layer's forward check.
pub(crate) fn coefficients_plane(
    input: &[f64],
    guidance: &[f64],
    width: usize,
    height: usize,
    p: &GuidedFilterParams,
) -> [Vec<f64>; 4] {
    let n = width * height;
    let r = p.window.radius;
    let bm = |src: &[f64]| {
        let mut out = vec![0.0; n];
        box_mean_plane(src, width, height, r, &mut out);
        out
    };
    // Window statistics of the guidance are taken relative to its first
    // pixel. The filter is invariant to that shift; it makes a constant
    // guidance produce exactly zero covariance and variance.
    let m0 = guidance[0];
    let shifted: Vec<f64> = guidance.iter().map(|m| m - m0).collect();
    let mean_i = bm(input);
    let mean_ms = bm(&shifted);
    let mi: Vec<f64> = shifted.iter().zip(input).map(|(m, i)| m * i).collect();
    let mm: Vec<f64> = shifted.iter().map(|m| m * m).collect();
    let corr_mi = bm(&mi);
    let corr_mm = bm(&mm);

    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for k in 0..n {
        let var = corr_mm[k] - mean_ms[k] * mean_ms[k];
        let cov = corr_mi[k] - mean_ms[k] * mean_i[k];
        a[k] = cov / (var + p.epsilon);
        let mean_m = mean_ms[k] + m0;
        b[k] = mean_i[k] - a[k] * mean_m;
    }
    let a_bar = bm(&a);
    let b_bar = bm(&b);
    [a, b, a_bar, b_bar]
}

/// Linear coefficients `a_k`, `b_k` of every window plus their window means.
pub fn guided_filter_coefficients(
    input: &Image2D,
    guidance: &Image2D,
    p: &GuidedFilterParams,
) -> Result<CoefficientMaps> {
    check_inputs(input, guidance, p)?;
    let (w, h) = input.dims();
    let [a, b, a_bar, b_bar] = coefficients_plane(input.pixels(), guidance.pixels(), w, h, p);
    let wrap = |v: Vec<f64>| -> Result<Image2D> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical("guided filter produced non-finite coefficients"));
        }
        Ok(Image2D::from_vec_unchecked(w, h, v))
    };
    Ok(CoefficientMaps {
        a: wrap(a)?,
        b: wrap(b)?,
        a_bar: wrap(a_bar)?,
        b_bar: wrap(b_bar)?,
    })
}

/// Filters `input` steered by `guidance`.
pub fn guided_filter(input: &Image2D, guidance: &Image2D, p: &GuidedFilterParams) -> Result<Image2D> {
    let c = guided_filter_coefficients(input, guidance, p)?;
    c.a_bar.zip_map(guidance, |a, m| a * m)?.zip_map(&c.b_bar, |am, b| am + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxfilter::box_mean;

    fn ramp(w: usize, h: usize) -> Image2D {
        Image2D::from_fn(w, h, |x, y| ((x * 7 + y * 13) % 11) as f64 / 10.0)
    }

    #[test]
    fn constant_guidance_gives_zero_slope() {
        let i = ramp(9, 8);
        let m = Image2D::filled(9, 8, 0.4);
        let p = GuidedFilterParams::new(2, 1e-3);
        let c = guided_filter_coefficients(&i, &m, &p).unwrap();
        assert!(c.a.pixels().iter().all(|&v| v == 0.0));
        let bi = box_mean(&i, p.window).unwrap();
        assert!(c.b.max_abs_diff(&bi) < 1e-15);
        let out = guided_filter(&i, &m, &p).unwrap();
        let twice = box_mean(&bi, p.window).unwrap();
        assert!(out.max_abs_diff(&twice) < 1e-12);
    }

    #[test]
    fn self_guidance_slope_near_one() {
        let i = Image2D::from_fn(16, 16, |x, y| if (x / 4 + y / 4) % 2 == 0 { 0.0 } else { 1.0 });
        let p = GuidedFilterParams::new(1, 1e-9);
        let c = guided_filter_coefficients(&i, &i, &p).unwrap();
        // windows straddling a checker edge have variance >= ~0.2
        let k = 3 + 16 * 3;
        assert!((c.a.pixels()[k] - 1.0).abs() < 1e-6);
        assert!(c.b.pixels()[k].abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let i = ramp(8, 8);
        let m = ramp(8, 7);
        assert!(matches!(
            guided_filter(&i, &m, &GuidedFilterParams::default()),
            Err(Error::Contract(_))
        ));
        assert!(guided_filter(&i, &i, &GuidedFilterParams::new(1, 0.0)).is_err());
        assert!(guided_filter(&i, &i, &GuidedFilterParams::new(8, 1e-2)).is_err());
    }
}
