//! Masked image-quality metrics and the per-image report.

use std::fmt::Write as _;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::image::{Image2D, Mask};
use crate::wavelet::lowpass_reconstruction;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Decomposition depth of the low-frequency audit.
pub const LOWFREQ_LEVELS: usize = 2;

/// Normalized 1-D Gaussian taps of odd length `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable correlation with a symmetric odd-length kernel, zero outside the
/// image. With `normalize` each output is divided by the kernel mass that
/// fell inside the image (so constants are preserved at the border).
pub(crate) fn separable_filter_plane<T: Float>(
    src: &[T],
    width: usize,
    height: usize,
    kernel: &[f64],
    normalize: bool,
    dst: &mut [T],
) {
    let r = kernel.len() / 2;
    let weight_sum = |i: usize, n: usize| -> f64 {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(n - 1);
        (lo..=hi).map(|j| kernel[j + r - i]).sum()
    };
    let norm_x: Vec<f64> = (0..width).map(|x| weight_sum(x, width)).collect();
    let norm_y: Vec<f64> = (0..height).map(|y| weight_sum(y, height)).collect();

    let mut tmp = vec![0.0f64; width * height];
    for y in 0..height {
        for x in 0..width {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(width - 1);
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += kernel[j + r - x] * src[y * width + j].to_f64().unwrap();
            }
            tmp[y * width + x] = if normalize { acc / norm_x[x] } else { acc };
        }
    }
    for y in 0..height {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(height - 1);
        for x in 0..width {
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += kernel[j + r - y] * tmp[j * width + x];
            }
            let v = if normalize { acc / norm_y[y] } else { acc };
            dst[y * width + x] = T::from(v).unwrap();
        }
    }
}

fn gaussian_blur(img: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    separable_filter_plane(img, w, h, kernel, true, &mut out);
    out
}

fn check_metric_inputs(a: &Image2D, b: &Image2D, mask: &Mask, what: &str) -> Result<()> {
    a.ensure_same_dims(b, what)?;
    mask.ensure_matches(a, what)?;
    if mask.is_all_false() {
        return Err(Error::contract(format!("{what}: empty mask")));
    }
    Ok(())
}

/// Mean absolute difference over mask-true pixels.
pub fn mae_masked(a: &Image2D, b: &Image2D, mask: &Mask) -> Result<f64> {
    check_metric_inputs(a, b, mask, "mae")?;
    let (mut sum, mut n) = (0.0, 0usize);
    for ((x, y), &m) in a.pixels().iter().zip(b.pixels()).zip(mask.bits()) {
        if m {
            sum += (x - y).abs();
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Per-pixel SSIM with an 11x11 Gaussian window (sigma 1.5, dynamic range 1).
///
/// Written so that `ssim_map(a, a)` is exactly one and `ssim_map(a, b)` equals
/// `ssim_map(b, a)` bit for bit.
pub fn ssim_map(a: &Image2D, b: &Image2D) -> Result<Image2D> {
    a.ensure_same_dims(b, "ssim")?;
    let (w, h) = a.dims();
    let kernel = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let (pa, pb) = (a.pixels(), b.pixels());
    let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| x * y).collect();
    let mu_a = gaussian_blur(pa, w, h, &kernel);
    let mu_b = gaussian_blur(pb, w, h, &kernel);
    let e_aa = gaussian_blur(&aa, w, h, &kernel);
    let e_bb = gaussian_blur(&bb, w, h, &kernel);
    let e_ab = gaussian_blur(&ab, w, h, &kernel);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let map = (0..w * h)
        .map(|k| {
            let (ma, mb) = (mu_a[k], mu_b[k]);
            let va = e_aa[k] - ma * ma;
            let vb = e_bb[k] - mb * mb;
            let cov = e_ab[k] - ma * mb;
            let num = (2.0 * (ma * mb) + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            num / den
        })
        .collect();
    Ok(Image2D::from_vec_unchecked(w, h, map))
}

/// Mean of the SSIM map over mask-true pixels.
pub fn ssim_masked(a: &Image2D, b: &Image2D, mask: &Mask) -> Result<f64> {
    check_metric_inputs(a, b, mask, "ssim")?;
    let map = ssim_map(a, b)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (&v, &m) in map.pixels().iter().zip(mask.bits()) {
        if m {
            sum += v;
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// SSIM between the two-level D4 approximations of `pred` and `reference`,
/// compared at full resolution.
pub fn lowfreq_ssim(pred: &Image2D, reference: &Image2D, mask: &Mask) -> Result<f64> {
    check_metric_inputs(pred, reference, mask, "lowfreq_ssim")?;
    let lp = lowpass_reconstruction(pred, LOWFREQ_LEVELS)?;
    let lr = lowpass_reconstruction(reference, LOWFREQ_LEVELS)?;
    ssim_masked(&lp, &lr, mask)
}

/// Pearson correlation over mask-true pixels (0 when either side is constant).
pub fn pearson_masked(a: &Image2D, b: &Image2D, mask: &Mask) -> Result<f64> {
    check_metric_inputs(a, b, mask, "pearson")?;
    let sel: Vec<(f64, f64)> = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .zip(mask.bits())
        .filter(|(_, &m)| m)
        .map(|((&x, &y), _)| (x, y))
        .collect();
    let n = sel.len() as f64;
    let (ma, mb) = sel
        .iter()
        .fold((0.0, 0.0), |(sa, sb), (x, y)| (sa + x / n, sb + y / n));
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in &sel {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// `%.9g`-style formatting: nine significant digits, trailing zeros trimmed.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{:.8e}", v);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, v);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub variant: String,
    pub task: String,
    pub mae: f64,
    pub ssim: f64,
    pub lowfreq_ssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Per-image metric rows in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

pub const METRIC_CSV_HEADER: &str = "id,variant,task,mae,ssim,lowfreq_ssim";

impl MetricReport {
    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    pub fn variant_rows<'a>(&'a self, variant: &'a str) -> impl Iterator<Item = &'a MetricRow> + 'a {
        self.rows.iter().filter(move |r| r.variant == variant)
    }

    /// Aggregate `(mae, ssim, lowfreq_ssim)` over one variant.
    pub fn aggregate(&self, variant: &str) -> Option<[MeanStd; 3]> {
        let rows: Vec<&MetricRow> = self.variant_rows(variant).collect();
        if rows.is_empty() {
            return None;
        }
        Some([
            MeanStd::of(rows.iter().map(|r| r.mae)),
            MeanStd::of(rows.iter().map(|r| r.ssim)),
            MeanStd::of(rows.iter().map(|r| r.lowfreq_ssim)),
        ])
    }

    /// Distinct variant names in first-seen order.
    pub fn variants(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.variant) {
                seen.push(r.variant.clone());
            }
        }
        seen
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRIC_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.id,
                r.variant,
                r.task,
                format_sig9(r.mae),
                format_sig9(r.ssim),
                format_sig9(r.lowfreq_ssim)
            )
            .unwrap();
        }
        out
    }
}

/// Validates a metrics CSV against the report schema. Returns the row count.
pub fn validate_metric_csv(text: &str) -> Result<usize> {
    let mut lines = text.split('\n');
    if lines.next() != Some(METRIC_CSV_HEADER) {
        return Err(Error::format(0, "metrics CSV header mismatch"));
    }
    if text.contains('\r') {
        return Err(Error::format(0, "metrics CSV must use LF line endings"));
    }
    if !text.ends_with('\n') {
        return Err(Error::format(text.len() as u64, "metrics CSV missing final newline"));
    }
    let mut offset = METRIC_CSV_HEADER.len() as u64 + 1;
    let mut n = 0;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 || fields[..3].iter().any(|f| f.is_empty()) {
            return Err(Error::format(offset, format!("malformed row `{line}`")));
        }
        for f in &fields[3..] {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::format(offset, format!("non-numeric field `{f}`")))?;
            if !v.is_finite() {
                return Err(Error::format(offset, format!("non-finite field `{f}`")));
            }
        }
        let mae: f64 = fields[3].parse().unwrap();
        let ssim: f64 = fields[4].parse().unwrap();
        if mae < 0.0 || !(-1.0..=1.0).contains(&ssim) {
            return Err(Error::format(offset, format!("metric out of range in `{line}`")));
        }
        offset += line.len() as u64 + 1;
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(seed: u64) -> Image2D {
        Image2D::from_fn(32, 32, |x, y| {
            let v = ((x as u64 * 31 + y as u64 * 17 + seed * 7) % 23) as f64 / 22.0;
            0.5 * v + 0.25 * ((x as f64) * 0.3).sin().abs()
        })
    }

    #[test]
    fn identical_images() {
        let a = textured(1);
        let m = Mask::full(32, 32);
        assert_eq!(mae_masked(&a, &a, &m).unwrap(), 0.0);
        assert_eq!(ssim_masked(&a, &a, &m).unwrap(), 1.0);
        assert_eq!(lowfreq_ssim(&a, &a, &m).unwrap(), 1.0);
    }

    #[test]
    fn constant_offset_mae() {
        let a = textured(2);
        let b = a.map(|v| v + 0.01);
        let mae = mae_masked(&a, &b, &Mask::full(32, 32)).unwrap();
        assert!((mae - 0.01).abs() < 1e-12);
    }

    #[test]
    fn checkerboard_half_mask() {
        let a = Image2D::zeros(8, 8);
        let b = Image2D::from_fn(8, 8, |x, y| if (x + y) % 2 == 0 { 0.1 } else { -0.1 });
        // left half: 32 pixels, all |diff| = 0.1
        let mask = Mask::from_fn(8, 8, |x, _| x < 4);
        assert!((mae_masked(&a, &b, &mask).unwrap() - 0.1).abs() < 1e-15);
        // only pixels where the difference is +0.1 plus a column of zeros
        let c = Image2D::from_fn(8, 8, |x, y| if (x + y) % 2 == 0 { 0.1 } else { 0.0 });
        let mae = mae_masked(&a, &c, &mask).unwrap();
        assert!((mae - 16.0 * 0.1 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn empty_mask_rejected() {
        let a = textured(3);
        assert!(matches!(
            mae_masked(&a, &a, &Mask::empty(32, 32)),
            Err(Error::Contract(_))
        ));
        assert!(ssim_masked(&a, &a, &Mask::empty(32, 32)).is_err());
    }

    #[test]
    fn inverted_image_has_negative_ssim() {
        let a = Image2D::from_fn(32, 32, |x, y| if (x / 4 + y / 4) % 2 == 0 { 0.05 } else { 0.95 });
        let b = a.map(|v| 1.0 - v);
        assert!(ssim_masked(&a, &b, &Mask::full(32, 32)).unwrap() < 0.0);
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.5), "0.5");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(123456789.0), "123456789");
        assert_eq!(format_sig9(1.5e-7), "1.5e-07");
        assert_eq!(format_sig9(-2.0), "-2");
        assert_eq!(format_sig9(0.0), "0");
    }

    #[test]
    fn gaussian_blur_preserves_constants_at_border() {
        let k = gaussian_kernel(11, 1.5);
        let src = vec![0.3; 20 * 9];
        let out = gaussian_blur(&src, 20, 9, &k);
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn csv_schema() {
        let mut r = MetricReport::default();
        r.push(MetricRow {
            id: "p0".into(),
            variant: "withGF".into(),
            task: "sr".into(),
            mae: 0.0123,
            ssim: 0.95,
            lowfreq_ssim: 0.99,
        });
        let csv = r.to_csv();
        assert_eq!(validate_metric_csv(&csv).unwrap(), 1);
        assert!(validate_metric_csv("id,variant\n").is_err());
        assert!(validate_metric_csv(&csv.replace("0.95", "x")).is_err());
    }
}
