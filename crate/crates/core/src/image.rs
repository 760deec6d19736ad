//! Pixel-grid containers shared by the whole pipeline.

use std::fmt;

use crate::error::{Error, Result};

/// Single-channel real-valued image, row-major.
///
/// Values are nominally in `[0, 1]` but degraded inputs may leave that range.
/// Every value is finite.
#[derive(Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl fmt::Debug for Image2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image2D")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Image2D {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let count = width
            .checked_mul(height)
            .ok_or_else(|| Error::contract("image dimensions overflow"))?;
        if pixels.len() != count {
            return Err(Error::contract(format!(
                "{width}x{height} image needs {count} pixels, got {}",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite pixel at index {i}")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Panics on zero dimensions.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        assert!(value.is_finite());
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                assert!(v.is_finite(), "non-finite pixel at ({x}, {y})");
                pixels.push(v);
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    /// Skips the finiteness scan. Callers guarantee finite input.
    pub(crate) fn from_vec_unchecked(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        debug_assert!(pixels.iter().all(|v| v.is_finite()));
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn same_dims(&self, other: &Image2D) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn ensure_same_dims(&self, other: &Image2D, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "{what}: dimension mismatch {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Elementwise map; the closure must return finite values.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image2D {
        let pixels: Vec<f64> = self.pixels.iter().map(|&v| f(v)).collect();
        assert!(pixels.iter().all(|v| v.is_finite()), "map produced non-finite value");
        Image2D::from_vec_unchecked(self.width, self.height, pixels)
    }

    /// Elementwise combination of two equally sized images.
    pub fn zip_map(&self, other: &Image2D, f: impl Fn(f64, f64) -> f64) -> Result<Image2D> {
        self.ensure_same_dims(other, "zip_map")?;
        let pixels: Vec<f64> = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| f(a, b))
            .collect();
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("zip_map produced non-finite value"));
        }
        Ok(Image2D::from_vec_unchecked(self.width, self.height, pixels))
    }

    pub fn clamp01(&self) -> Image2D {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn max_abs_diff(&self, other: &Image2D) -> f64 {
        assert!(self.same_dims(other));
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }
}

/// Boolean evaluation mask; `true` pixels take part in metrics.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::contract(format!(
                "mask {width}x{height} with {} bits",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Number of true pixels.
    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_all_false(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn union(&self, other: &Mask) -> Mask {
        assert_eq!(self.dims(), other.dims());
        Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn intersection_over_union(&self, other: &Mask) -> f64 {
        assert_eq!(self.dims(), other.dims());
        let (mut inter, mut uni) = (0usize, 0usize);
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += (*a && *b) as usize;
            uni += (*a || *b) as usize;
        }
        if uni == 0 {
            1.0
        } else {
            inter as f64 / uni as f64
        }
    }

    /// Mask as a 0/1 image.
    pub fn to_image(&self) -> Image2D {
        Image2D::from_vec_unchecked(
            self.width,
            self.height,
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }

    pub(crate) fn ensure_matches(&self, image: &Image2D, what: &str) -> Result<()> {
        if self.dims() == image.dims() {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "{what}: mask {}x{} does not match image {}x{}",
                self.width,
                self.height,
                image.width(),
                image.height()
            )))
        }
    }
}

/// Restoration task an [`ImagePair`] was generated for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    /// Factor-4 super-resolution.
    SuperResolution,
    Denoising,
}

impl Task {
    /// Spatial factor between the degraded input and the ground truth.
    pub fn scale(self) -> usize {
        match self {
            Task::SuperResolution => SR_FACTOR,
            Task::Denoising => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::SuperResolution => "sr",
            Task::Denoising => "denoising",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sr" | "super-resolution" => Ok(Task::SuperResolution),
            "denoising" | "dn" => Ok(Task::Denoising),
            other => Err(Error::config(format!("unknown task `{other}`"))),
        }
    }
}

pub const SR_FACTOR: usize = 4;

/// Degraded input, second-modality guide, label and evaluation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub input: Image2D,
    pub guide: Image2D,
    pub ground_truth: Image2D,
    pub mask: Mask,
    pub meta: PairMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairMeta {
    pub task: Task,
    /// Human-readable description of the degradation, e.g. `nn-down-x4`.
    pub degradation: String,
    pub seed: u64,
}

impl ImagePair {
    /// Checks the dimension contract between the four images.
    pub fn validate(&self) -> Result<()> {
        self.guide
            .ensure_same_dims(&self.ground_truth, "guide vs ground truth")?;
        self.mask.ensure_matches(&self.ground_truth, "pair mask")?;
        let s = self.meta.task.scale();
        let (w, h) = self.ground_truth.dims();
        if self.input.dims() != (w / s, h / s) || w % s != 0 || h % s != 0 {
            return Err(Error::contract(format!(
                "input {}x{} inconsistent with {}x{} label for task {}",
                self.input.width(),
                self.input.height(),
                w,
                h,
                self.meta.task.as_str()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_pixels() {
        assert!(Image2D::new(2, 1, vec![0.0, f64::NAN]).is_err());
        assert!(Image2D::new(0, 1, vec![]).is_err());
        assert!(Image2D::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn iou_of_disjoint_masks_is_zero() {
        let a = Mask::from_fn(4, 4, |x, _| x < 2);
        let b = Mask::from_fn(4, 4, |x, _| x >= 2);
        assert_eq!(a.intersection_over_union(&b), 0.0);
        assert_eq!(a.union(&b).area(), 16);
    }
}
