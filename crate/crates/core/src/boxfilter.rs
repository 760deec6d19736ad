//! Sliding-window means in time independent of the window radius.
//!
//! Windows are `(2r+1)x(2r+1)` squares clipped at the image border. A clipped
//! window is normalized by the number of pixels it actually covers, so a
//! constant image stays constant right up to the edges.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::image::Image2D;

/// Square window of side `2 * radius + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WindowSpec {
    pub radius: usize,
}

impl WindowSpec {
    pub fn new(radius: usize) -> Self {
        Self { radius }
    }

    /// Side length of an unclipped window.
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub(crate) fn check(&self, width: usize, height: usize) -> Result<()> {
        if self.radius >= width.min(height) {
            return Err(Error::config(format!(
                "box radius {} must be smaller than the image's smaller side ({})",
                self.radius,
                width.min(height)
            )));
        }
        Ok(())
    }
}

#[inline]
fn span(i: usize, r: usize, n: usize) -> (usize, usize) {
    (i.saturating_sub(r), (i + r).min(n - 1))
}

/// Box mean over a row-major plane with f64 accumulation.
///
/// Row prefix sums give horizontal window sums, column prefix sums of those
/// give the 2-D window sums. Each output pixel is formed from a fixed set of
/// prefix differences, so the result does not depend on how the work is split.
pub(crate) fn box_mean_plane<T: Float>(
    src: &[T],
    width: usize,
    height: usize,
    radius: usize,
    dst: &mut [T],
) {
    debug_assert_eq!(src.len(), width * height);
    debug_assert_eq!(dst.len(), width * height);
    if radius == 0 {
        dst.copy_from_slice(src);
        return;
    }

    let mut horiz = vec![0.0f64; width * height];
    let mut prefix = vec![0.0f64; width + 1];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for (x, v) in row.iter().enumerate() {
            prefix[x + 1] = prefix[x] + v.to_f64().unwrap();
        }
        let out = &mut horiz[y * width..(y + 1) * width];
        for (x, o) in out.iter_mut().enumerate() {
            let (x0, x1) = span(x, radius, width);
            *o = prefix[x1 + 1] - prefix[x0];
        }
    }

    // Column prefix sums, stored row by row: colsum[(y+1)*w + x] = sum_{y'<=y} horiz[y'][x].
    let mut colsum = vec![0.0f64; (height + 1) * width];
    for y in 0..height {
        let (prev, next) = colsum.split_at_mut((y + 1) * width);
        let prev = &prev[y * width..];
        let next = &mut next[..width];
        let h = &horiz[y * width..(y + 1) * width];
        for x in 0..width {
            next[x] = prev[x] + h[x];
        }
    }

    let counts_x: Vec<f64> = (0..width)
        .map(|x| {
            let (x0, x1) = span(x, radius, width);
            (x1 - x0 + 1) as f64
        })
        .collect();
    for y in 0..height {
        let (y0, y1) = span(y, radius, height);
        let ny = (y1 - y0 + 1) as f64;
        let top = &colsum[y0 * width..(y0 + 1) * width];
        let bottom = &colsum[(y1 + 1) * width..(y1 + 2) * width];
        let out = &mut dst[y * width..(y + 1) * width];
        for x in 0..width {
            let s = bottom[x] - top[x];
            out[x] = T::from(s / (counts_x[x] * ny)).unwrap();
        }
    }
}

/// Mean of `image` over each clipped `(2r+1)x(2r+1)` window.
pub fn box_mean(image: &Image2D, w: WindowSpec) -> Result<Image2D> {
    let (width, height) = image.dims();
    w.check(width, height)?;
    let mut out = vec![0.0; image.len()];
    box_mean_plane(image.pixels(), width, height, w.radius, &mut out);
    Ok(Image2D::from_vec_unchecked(width, height, out))
}

/// Reference box mean by explicit per-pixel window loops. `O(N r^2)`.
pub fn box_mean_bruteforce(image: &Image2D, w: WindowSpec) -> Result<Image2D> {
    let (width, height) = image.dims();
    w.check(width, height)?;
    let r = w.radius as isize;
    Ok(Image2D::from_fn(width, height, |x, y| {
        let mut sum = 0.0;
        let mut n = 0usize;
        for dy in -r..=r {
            for dx in -r..=r {
                let (xx, yy) = (x as isize + dx, y as isize + dy);
                if xx >= 0 && yy >= 0 && (xx as usize) < width && (yy as usize) < height {
                    sum += image.get(xx as usize, yy as usize);
                    n += 1;
                }
            }
        }
        sum / n as f64
    }))
}

/// Number of in-bounds pixels in each clipped window.
pub fn window_count(width: usize, height: usize, w: WindowSpec) -> Result<Image2D> {
    if width == 0 || height == 0 {
        return Err(Error::config("window_count needs positive dimensions"));
    }
    w.check(width, height)?;
    Ok(Image2D::from_fn(width, height, |x, y| {
        let (x0, x1) = span(x, w.radius, width);
        let (y0, y1) = span(y, w.radius, height);
        ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3() -> Image2D {
        Image2D::new(3, 3, (1..=9).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn radius_zero_is_identity() {
        let img = grid3();
        assert_eq!(box_mean(&img, WindowSpec::new(0)).unwrap(), img);
        assert_eq!(box_mean_bruteforce(&img, WindowSpec::new(0)).unwrap(), img);
    }

    #[test]
    fn three_by_three_center_and_corner() {
        let out = box_mean(&grid3(), WindowSpec::new(1)).unwrap();
        assert!((out.get(1, 1) - 5.0).abs() < 1e-15);
        assert!((out.get(0, 0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Image2D::filled(9, 7, 0.37);
        for r in 0..7 {
            let out = box_mean(&img, WindowSpec::new(r)).unwrap();
            assert!(out.max_abs_diff(&img) < 1e-15, "r={r}");
            let bf = box_mean_bruteforce(&img, WindowSpec::new(r)).unwrap();
            assert!(bf.max_abs_diff(&img) < 1e-15, "r={r}");
        }
    }

    #[test]
    fn radius_must_fit() {
        let img = Image2D::zeros(8, 4);
        assert!(matches!(
            box_mean(&img, WindowSpec::new(4)),
            Err(Error::Config(_))
        ));
        assert!(box_mean(&img, WindowSpec::new(3)).is_ok());
        assert!(window_count(8, 4, WindowSpec::new(4)).is_err());
    }

    #[test]
    fn counts_on_five_by_five() {
        let c = window_count(5, 5, WindowSpec::new(1)).unwrap();
        assert_eq!(c.get(2, 2), 9.0);
        assert_eq!(c.get(0, 0), 4.0);
        assert_eq!(c.get(2, 0), 6.0);
        let ones = window_count(5, 5, WindowSpec::new(0)).unwrap();
        assert!(ones.pixels().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn count_total_matches_enumeration() {
        let (w, h, r) = (7usize, 7usize, 2isize);
        let mut brute = 0usize;
        for y in 0..h as isize {
            for x in 0..w as isize {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (xx, yy) = (x + dx, y + dy);
                        if xx >= 0 && yy >= 0 && xx < w as isize && yy < h as isize {
                            brute += 1;
                        }
                    }
                }
            }
        }
        let c = window_count(w, h, WindowSpec::new(2)).unwrap();
        assert_eq!(c.pixels().iter().sum::<f64>(), brute as f64);
        assert_eq!(brute, 841);
    }

    #[test]
    fn f32_plane_accumulates_in_f64() {
        let src: Vec<f32> = (0..64).map(|i| (i as f32) * 0.1).collect();
        let mut dst = vec![0f32; 64];
        box_mean_plane(&src, 8, 8, 2, &mut dst);
        let img = Image2D::new(8, 8, src.iter().map(|&v| v as f64).collect()).unwrap();
        let reference = box_mean_bruteforce(&img, WindowSpec::new(2)).unwrap();
        for (a, b) in dst.iter().zip(reference.pixels()) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }
}
