//! Synthetic two-modality head phantoms and the datasets built from them.
//!
//! Both modalities share one geometry (a head ellipse holding random ellipses
//! and rectangles) but draw per-shape intensities independently, so edges
//! coincide across modalities while contrasts do not.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::boxfilter::{box_mean, WindowSpec};
use crate::degrade::{apply_noise, NoiseSpec};
use crate::error::{Error, Result};
use crate::image::{Image2D, ImagePair, Mask, PairMeta, Task, SR_FACTOR};

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    /// Pixels per side.
    pub size: usize,
    /// Number of shapes, the enclosing head ellipse included.
    pub n_shapes: usize,
    /// Intensity range shapes draw from in modality A.
    pub contrast_a: (f64, f64),
    /// Intensity range shapes draw from in modality B.
    pub contrast_b: (f64, f64),
    /// Peak amplitude of the smooth texture added inside the head.
    pub texture_amplitude: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 64,
            n_shapes: 6,
            contrast_a: (0.2, 1.0),
            contrast_b: (0.2, 1.0),
            texture_amplitude: 0.02,
        }
    }
}

impl PhantomSpec {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 32 {
            return Err(Error::config(format!("phantom size must be >= 32, got {}", self.size)));
        }
        if self.n_shapes == 0 {
            return Err(Error::config("phantom needs at least one shape"));
        }
        for (name, (lo, hi)) in [("contrast_a", self.contrast_a), ("contrast_b", self.contrast_b)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config(format!("{name} range ({lo}, {hi}) is invalid")));
            }
        }
        if !(self.texture_amplitude >= 0.0 && self.texture_amplitude.is_finite()) {
            return Err(Error::config("texture_amplitude must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Ellipse { cx: f64, cy: f64, ax: f64, ay: f64, angle: f64 },
    Rect { cx: f64, cy: f64, hx: f64, hy: f64, angle: f64 },
}

impl Shape {
    /// Point-in-shape test at pixel centre `(px, py)`.
    fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, ax, ay, angle } => {
                let (u, v) = rotate(px - cx, py - cy, angle);
                (u / ax).powi(2) + (v / ay).powi(2) <= 1.0
            }
            Shape::Rect { cx, cy, hx, hy, angle } => {
                let (u, v) = rotate(px - cx, py - cy, angle);
                u.abs() <= hx && v.abs() <= hy
            }
        }
    }
}

fn rotate(dx: f64, dy: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * dx + s * dy, -s * dx + c * dy)
}

/// Draws an intensity in `range` that keeps a margin from earlier draws, so
/// neighbouring regions stay distinguishable. Falls back to the last draw.
fn draw_contrast(rng: &mut ChaCha8Rng, range: (f64, f64), taken: &[f64]) -> f64 {
    const MIN_GAP: f64 = 0.1;
    let mut v = range.0;
    for _ in 0..32 {
        v = if range.1 > range.0 {
            rng.random_range(range.0..=range.1)
        } else {
            range.0
        };
        if taken.iter().all(|t| (t - v).abs() >= MIN_GAP) {
            break;
        }
    }
    v
}

struct Texture {
    terms: Vec<(f64, f64, f64)>,
}

impl Texture {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let terms = (0..3)
            .map(|_| {
                let fx = rng.random_range(-2.0..=2.0);
                let fy = rng.random_range(-2.0..=2.0);
                let phase = rng.random_range(0.0..2.0 * PI);
                (fx, fy, phase)
            })
            .collect();
        Self { terms }
    }

    /// Value in [-1, 1] at pixel `(x, y)` of a `size`-wide image.
    fn at(&self, x: f64, y: f64, size: f64) -> f64 {
        self.terms
            .iter()
            .map(|(fx, fy, ph)| (2.0 * PI * (fx * x + fy * y) / size + ph).sin())
            .sum::<f64>()
            / self.terms.len() as f64
    }
}

/// Generates the two modalities and the union of shape supports.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(Image2D, Image2D, Mask)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.size as f64;
    let c = n / 2.0;

    let mut shapes = Vec::with_capacity(spec.n_shapes);
    let head_ax = n * rng.random_range(0.36..=0.42);
    let head_ay = n * rng.random_range(0.40..=0.46);
    shapes.push(Shape::Ellipse {
        cx: c + rng.random_range(-0.02..=0.02) * n,
        cy: c + rng.random_range(-0.02..=0.02) * n,
        ax: head_ax,
        ay: head_ay,
        angle: rng.random_range(-0.15..=0.15),
    });
    for _ in 1..spec.n_shapes {
        // centre inside the inner 55% of the head
        let t = rng.random_range(0.0..2.0 * PI);
        let rho = rng.random_range(0.0f64..=1.0).sqrt() * 0.55;
        let cx = c + rho * head_ax * t.cos();
        let cy = c + rho * head_ay * t.sin();
        let sx = n * rng.random_range(0.06..=0.16);
        let sy = n * rng.random_range(0.06..=0.16);
        let angle = rng.random_range(0.0..PI);
        shapes.push(if rng.random_bool(0.6) {
            Shape::Ellipse { cx, cy, ax: sx, ay: sy, angle }
        } else {
            Shape::Rect { cx, cy, hx: sx * 0.8, hy: sy * 0.8, angle }
        });
    }

    let mut taken_a = vec![0.0];
    let mut taken_b = vec![0.0];
    let mut values = Vec::with_capacity(shapes.len());
    for _ in &shapes {
        let va = draw_contrast(&mut rng, spec.contrast_a, &taken_a);
        let vb = draw_contrast(&mut rng, spec.contrast_b, &taken_b);
        taken_a.push(va);
        taken_b.push(vb);
        values.push((va, vb));
    }
    let tex_a = Texture::draw(&mut rng);
    let tex_b = Texture::draw(&mut rng);

    let size = spec.size;
    let mut a = vec![0.0; size * size];
    let mut b = vec![0.0; size * size];
    let mut bits = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let k = y * size + x;
            for (shape, &(va, vb)) in shapes.iter().zip(&values) {
                if shape.contains(px, py) {
                    a[k] = va;
                    b[k] = vb;
                    bits[k] = true;
                }
            }
            if bits[k] && spec.texture_amplitude > 0.0 {
                a[k] += spec.texture_amplitude * tex_a.at(x as f64, y as f64, n);
                b[k] += spec.texture_amplitude * tex_b.at(x as f64, y as f64, n);
            }
        }
    }
    Ok((
        Image2D::new(size, size, a)?,
        Image2D::new(size, size, b)?,
        Mask::new(size, size, bits)?,
    ))
}

/// Normalized Sobel gradient magnitude (a unit step gives 0.5 next to the edge).
/// Borders replicate the nearest pixel.
pub fn sobel_magnitude(image: &Image2D) -> Image2D {
    let (w, h) = image.dims();
    let at = |x: isize, y: isize| {
        image.get(x.clamp(0, w as isize - 1) as usize, y.clamp(0, h as isize - 1) as usize)
    };
    Image2D::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
            - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
        let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
            - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        (gx * gx + gy * gy).sqrt() / 8.0
    })
}

/// Keeps the top-left pixel of every `factor x factor` block.
pub fn downsample_nearest(image: &Image2D, factor: usize) -> Result<Image2D> {
    let (w, h) = image.dims();
    if factor == 0 || w % factor != 0 || h % factor != 0 {
        return Err(Error::contract(format!(
            "{w}x{h} image not divisible by downsampling factor {factor}"
        )));
    }
    Ok(Image2D::from_fn(w / factor, h / factor, |x, y| {
        image.get(x * factor, y * factor)
    }))
}

/// SplitMix64 step, used to derive per-sample seeds from one base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds `n` image pairs for `task` from phantoms seeded off `spec.seed`.
///
/// Super-resolution inputs are factor-4 nearest-neighbour downsamples of
/// modality A; denoising inputs are modality A passed through `noise`. The
/// guide is modality B at full resolution and the label is modality A.
pub fn make_dataset(
    spec: &PhantomSpec,
    task: Task,
    noise: Option<&NoiseSpec>,
    n: usize,
) -> Result<Vec<ImagePair>> {
    if n == 0 {
        return Err(Error::config("dataset size must be at least 1"));
    }
    if task == Task::SuperResolution && spec.size % SR_FACTOR != 0 {
        return Err(Error::config(format!(
            "phantom size {} not divisible by {SR_FACTOR}",
            spec.size
        )));
    }
    (0..n)
        .map(|k| {
            let seed = derive_seed(spec.seed, k as u64);
            let (a, b, mask) = make_phantom(&spec.with_seed(seed))?;
            let (mut input, mut degradation) = match task {
                Task::SuperResolution => {
                    (downsample_nearest(&a, SR_FACTOR)?, format!("nn-down-x{SR_FACTOR}"))
                }
                Task::Denoising => (a.clone(), String::from("identity")),
            };
            if let Some(noise) = noise {
                let noise = noise.with_seed(derive_seed(noise.seed, seed));
                input = apply_noise(&input, &noise)?;
                degradation = if task == Task::Denoising {
                    noise.describe()
                } else {
                    format!("{degradation}+{}", noise.describe())
                };
            }
            let pair = ImagePair {
                input,
                guide: b,
                ground_truth: a,
                mask,
                meta: PairMeta {
                    task,
                    degradation,
                    seed,
                },
            };
            pair.validate()?;
            Ok(pair)
        })
        .collect()
}

fn morph(mask: &[bool], w: usize, h: usize, r: usize, dilate: bool) -> Vec<bool> {
    // out-of-bounds pixels are ignored, so an all-true mask survives erosion
    let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
        let mut out = vec![false; src.len()];
        for y in 0..h {
            for x in 0..w {
                let (lo, hi, fixed) = if horizontal {
                    (x.saturating_sub(r), (x + r).min(w - 1), y)
                } else {
                    (y.saturating_sub(r), (y + r).min(h - 1), x)
                };
                let mut iter = (lo..=hi).map(|t| {
                    if horizontal {
                        src[fixed * w + t]
                    } else {
                        src[t * w + fixed]
                    }
                });
                out[y * w + x] = if dilate {
                    iter.any(|b| b)
                } else {
                    iter.all(|b| b)
                };
            }
        }
        out
    };
    let tmp = pass(mask, true);
    pass(&tmp, false)
}

/// Evaluation mask: a 5x5 box-smoothed copy above `threshold`, then one
/// morphological closing with a 5x5 square.
pub fn head_mask(image: &Image2D, threshold: f64) -> Result<Mask> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::config(format!("mask threshold must lie in [0, 1), got {threshold}")));
    }
    let (w, h) = image.dims();
    let r = 2.min(w.min(h) - 1);
    let smooth = box_mean(image, WindowSpec::new(r))?;
    let raw: Vec<bool> = smooth.pixels().iter().map(|&v| v > threshold).collect();
    let closed = morph(&morph(&raw, w, h, 2, true), w, h, 2, false);
    Mask::new(w, h, closed)
}
