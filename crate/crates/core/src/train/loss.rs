//! Differentiable training losses.

use std::sync::Arc;

use crate::autodiff::{Graph, Shape, Tensor, Var};
use crate::error::{Error, Result};
use crate::image::Mask;
use crate::metrics::{gaussian_kernel, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossSpec {
    L1,
    /// `1 - SSIM` with the metric's window and constants.
    Ssim,
    /// L1 plus `weight` times the L1 distance of forward-difference gradients.
    L1GradientDifference { weight: f64 },
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::L1GradientDifference { weight: 0.5 }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::L1GradientDifference { weight } if !(weight >= 0.0 && weight.is_finite()) => {
                Err(Error::config(format!("gradient-difference weight {weight} must be >= 0")))
            }
            _ => Ok(()),
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            LossSpec::L1 => "l1".into(),
            LossSpec::Ssim => "ssim".into(),
            LossSpec::L1GradientDifference { weight } => format!("l1+gdl:{weight:?}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(LossSpec::L1),
            "ssim" => Ok(LossSpec::Ssim),
            _ => {
                let w = s
                    .strip_prefix("l1+gdl:")
                    .ok_or_else(|| Error::config(format!("unknown loss `{s}`")))?;
                let weight = w
                    .parse()
                    .map_err(|_| Error::config(format!("bad gradient-difference weight `{w}`")))?;
                let spec = LossSpec::L1GradientDifference { weight };
                spec.validate()?;
                Ok(spec)
            }
        }
    }
}

/// Per-pixel weights summing to one over the selected pixels.
fn weight_tensor(shape: Shape, select: impl Fn(usize, usize) -> bool) -> Result<Tensor<f64>> {
    let mut w = Vec::with_capacity(shape.numel());
    for y in 0..shape.height {
        for x in 0..shape.width {
            w.push(if select(x, y) { 1.0 } else { 0.0 });
        }
    }
    let n: f64 = w.iter().sum();
    if n == 0.0 {
        return Err(Error::contract("loss mask selects no pixels"));
    }
    w.iter_mut().for_each(|v| *v /= n);
    Tensor::new(shape, w)
}

/// Weighted mean of `x` over pixels chosen by `select`.
fn masked_mean(g: &mut Graph<f64>, x: Var, select: Option<&dyn Fn(usize, usize) -> bool>) -> Result<Var> {
    match select {
        None => Ok(g.mean(x)),
        Some(sel) => {
            let w = g.constant(weight_tensor(g.shape(x), sel)?);
            let wx = g.mul(x, w)?;
            Ok(g.sum(wx))
        }
    }
}

fn l1(g: &mut Graph<f64>, pred: Var, target: Var, mask: Option<&Mask>) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let a = g.abs(d);
    match mask {
        None => masked_mean(g, a, None),
        Some(m) => masked_mean(g, a, Some(&|x, y| m.get(x, y))),
    }
}

fn gradient_difference(g: &mut Graph<f64>, pred: Var, target: Var, mask: Option<&Mask>) -> Result<Var> {
    let px = g.diff_x(pred)?;
    let tx = g.diff_x(target)?;
    let dx = g.sub(px, tx)?;
    let dx = g.abs(dx);
    let py = g.diff_y(pred)?;
    let ty = g.diff_y(target)?;
    let dy = g.sub(py, ty)?;
    let dy = g.abs(dy);
    let (lx, ly) = match mask {
        None => (masked_mean(g, dx, None)?, masked_mean(g, dy, None)?),
        Some(m) => (
            masked_mean(g, dx, Some(&|x, y| m.get(x, y) && m.get(x + 1, y)))?,
            masked_mean(g, dy, Some(&|x, y| m.get(x, y) && m.get(x, y + 1)))?,
        ),
    };
    g.add(lx, ly)
}

fn ssim_loss(g: &mut Graph<f64>, a: Var, b: Var, mask: Option<&Mask>) -> Result<Var> {
    let k = Arc::new(gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA));
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mu_a = g.gaussian_blur(a, k.clone());
    let mu_b = g.gaussian_blur(b, k.clone());
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let e_aa = g.gaussian_blur(aa, k.clone());
    let e_bb = g.gaussian_blur(bb, k.clone());
    let e_ab = g.gaussian_blur(ab, k);
    let ma2 = g.mul(mu_a, mu_a)?;
    let mb2 = g.mul(mu_b, mu_b)?;
    let mab = g.mul(mu_a, mu_b)?;
    let va = g.sub(e_aa, ma2)?;
    let vb = g.sub(e_bb, mb2)?;
    let cov = g.sub(e_ab, mab)?;
    let n1 = g.mul_scalar(mab, 2.0);
    let n1 = g.add_scalar(n1, c1);
    let n2 = g.mul_scalar(cov, 2.0);
    let n2 = g.add_scalar(n2, c2);
    let num = g.mul(n1, n2)?;
    let d1 = g.add(ma2, mb2)?;
    let d1 = g.add_scalar(d1, c1);
    let d2 = g.add(va, vb)?;
    let d2 = g.add_scalar(d2, c2);
    let den = g.mul(d1, d2)?;
    let map = g.div(num, den)?;
    let mean = match mask {
        None => masked_mean(g, map, None)?,
        Some(m) => masked_mean(g, map, Some(&|x, y| m.get(x, y)))?,
    };
    let neg = g.mul_scalar(mean, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

/// Scalar loss node comparing `pred` with `target`, optionally restricted to
/// mask-true pixels.
pub fn loss(g: &mut Graph<f64>, pred: Var, target: Var, spec: &LossSpec, mask: Option<&Mask>) -> Result<Var> {
    let (sp, st) = (g.shape(pred), g.shape(target));
    if sp != st {
        return Err(Error::contract(format!("loss: prediction {sp} vs target {st}")));
    }
    if let Some(m) = mask {
        if (m.width(), m.height()) != (sp.width, sp.height) || sp.channels != 1 {
            return Err(Error::contract("loss: mask does not match prediction"));
        }
    }
    spec.validate()?;
    match *spec {
        LossSpec::L1 => l1(g, pred, target, mask),
        LossSpec::Ssim => ssim_loss(g, pred, target, mask),
        LossSpec::L1GradientDifference { weight } => {
            let base = l1(g, pred, target, mask)?;
            let gd = gradient_difference(g, pred, target, mask)?;
            let gd = g.mul_scalar(gd, weight);
            g.add(base, gd)
        }
    }
}

/// Loss value for fixed tensors.
pub fn loss_value(pred: &Tensor<f64>, target: &Tensor<f64>, spec: &LossSpec, mask: Option<&Mask>) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let t = g.constant(target.clone());
    let l = loss(&mut g, p, t, spec, mask)?;
    Ok(g.value(l).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image2D;

    fn img() -> Tensor<f64> {
        Tensor::from_image(&Image2D::from_fn(16, 12, |x, y| ((x * 3 + y * 5) % 7) as f64 / 7.0))
    }

    #[test]
    fn zero_for_identical() {
        let t = img();
        for spec in [LossSpec::L1, LossSpec::Ssim, LossSpec::default()] {
            assert_eq!(loss_value(&t, &t, &spec, None).unwrap(), 0.0, "{spec:?}");
        }
    }

    #[test]
    fn constant_offset_l1() {
        let t = img();
        let p = t.map(|v| v + 0.1);
        let l = loss_value(&p, &t, &LossSpec::L1, None).unwrap();
        assert!((l - 0.1).abs() < 1e-12);
        // a constant offset has no gradient difference
        let l = loss_value(&p, &t, &LossSpec::default(), None).unwrap();
        assert!((l - 0.1).abs() < 1e-12);
    }

    #[test]
    fn masked_l1_ignores_background() {
        let t = img();
        let mask = Mask::from_fn(16, 12, |x, _| x < 8);
        let p = Tensor::from_image(
            &Image2D::from_fn(16, 12, |x, y| t.data()[y * 16 + x] + if x < 8 { 0.2 } else { 5.0 }),
        );
        let l = loss_value(&p, &t, &LossSpec::L1, Some(&mask)).unwrap();
        assert!((l - 0.2).abs() < 1e-12);
    }

    #[test]
    fn parse_roundtrip() {
        for spec in [LossSpec::L1, LossSpec::Ssim, LossSpec::L1GradientDifference { weight: 0.25 }] {
            assert_eq!(LossSpec::parse(&spec.describe()).unwrap(), spec);
        }
        assert!(LossSpec::parse("l1+gdl:-1").is_err());
    }
}
