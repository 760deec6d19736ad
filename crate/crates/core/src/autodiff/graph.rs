//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! reverse topological order and every node's adjoint is complete by the time
//! it is visited.

use std::sync::Arc;

use rayon::prelude::*;

use super::tensor::{Scalar, Shape, Tensor};
use crate::boxfilter::box_mean_plane;
use crate::error::{Error, Result};
use crate::metrics::separable_filter_plane;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `k / 2` zeros on every side.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub const SAME: ConvSpec = ConvSpec {
        stride: 1,
        padding: Padding::Same,
    };

    pub fn strided(stride: usize) -> Self {
        Self {
            stride,
            padding: Padding::Same,
        }
    }
}

#[derive(Clone, Debug)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

/// Per-axis bilinear taps: `(i0, i1, frac)` for each output coordinate.
type Taps = Arc<Vec<(usize, usize, f64)>>;

#[derive(Clone, Debug)]
enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Square(Var),
    Abs(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Sum(Var),
    Mean(Var),
    Norm2(Var),
    BoxMean(Var, usize),
    GaussianBlur(Var, Arc<Vec<f64>>),
    DiffX(Var),
    DiffY(Var),
    Conv2d(Var, Var, Var, Arc<ConvGeom>),
    Bilinear(Var, Taps, Taps),
    PixelShuffle(Var, usize),
    Concat(Vec<Var>),
    InstanceNorm(Var, T),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Adjoint of `v`; `None` when nothing downstream depends on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adjoint of `v`, zeros if it was never reached.
    pub fn get_or_zeros(&self, v: Var, shape: Shape) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Sign pattern at every non-differentiable point of the tape. Two forward
/// passes with equal signatures lie on the same smooth piece.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KinkSignature(Vec<u64>);

pub struct Graph<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn t<T: Scalar>(v: f64) -> T {
    T::from(v).unwrap()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (parameter or input).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::contract(format!("{what}: shapes {sa} and {sb} differ")));
        }
        Ok(sa)
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let v = self.value(a).zip_map(self.value(b), f);
        Ok(self.push(v, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a), &[a])
    }

    pub fn mul_scalar(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::MulScalar(a, s), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.abs());
        self.push(v, Op::Abs(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope), &[a])
    }

    /// Sum of all elements, as a `1x1x1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = t::<T>(self.value(a).numel() as f64);
        let s = self.value(a).sum() / n;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Euclidean norm over all elements. The subgradient at zero is zero.
    pub fn norm2(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|&x| x * x).sum::<T>().sqrt();
        self.push(Tensor::scalar(s), Op::Norm2(a), &[a])
    }

    /// Per-channel clipped box mean of the given radius.
    pub fn box_mean(&mut self, a: Var, radius: usize) -> Result<Var> {
        let s = self.shape(a);
        if radius >= s.height.min(s.width) {
            return Err(Error::config(format!(
                "box radius {radius} too large for {}x{} planes",
                s.height, s.width
            )));
        }
        let src = self.value(a);
        let mut out = vec![T::zero(); s.numel()];
        for (c, dst) in out.chunks_mut(s.plane()).enumerate() {
            box_mean_plane(src.channel(c), s.width, s.height, radius, dst);
        }
        Ok(self.push(Tensor::from_parts(s, out), Op::BoxMean(a, radius), &[a]))
    }

    /// Per-channel separable blur with a symmetric odd-length `kernel`,
    /// renormalized by the in-image kernel mass.
    pub fn gaussian_blur(&mut self, a: Var, kernel: Arc<Vec<f64>>) -> Var {
        let s = self.shape(a);
        let src = self.value(a);
        let mut out = vec![T::zero(); s.numel()];
        for (c, dst) in out.chunks_mut(s.plane()).enumerate() {
            separable_filter_plane(src.channel(c), s.width, s.height, &kernel, true, dst);
        }
        self.push(Tensor::from_parts(s, out), Op::GaussianBlur(a, kernel), &[a])
    }

    /// Forward difference along the width axis (`w - 1` columns).
    pub fn diff_x(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.width < 2 {
            return Err(Error::contract("diff_x needs width >= 2"));
        }
        let o = Shape::new(s.channels, s.height, s.width - 1);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(o.numel());
        for c in 0..s.channels {
            for y in 0..s.height {
                let row = &src[(c * s.height + y) * s.width..][..s.width];
                out.extend(row.windows(2).map(|w| w[1] - w[0]));
            }
        }
        Ok(self.push(Tensor::from_parts(o, out), Op::DiffX(a), &[a]))
    }

    /// Forward difference along the height axis (`h - 1` rows).
    pub fn diff_y(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.height < 2 {
            return Err(Error::contract("diff_y needs height >= 2"));
        }
        let o = Shape::new(s.channels, s.height - 1, s.width);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(o.numel());
        for c in 0..s.channels {
            for y in 0..s.height - 1 {
                let base = (c * s.height + y) * s.width;
                out.extend((0..s.width).map(|x| src[base + s.width + x] - src[base + x]));
            }
        }
        Ok(self.push(Tensor::from_parts(o, out), Op::DiffY(a), &[a]))
    }

    /// 2-D cross-correlation.
    ///
    /// `weight` has shape `(cout * cin, k, k)` with output-channel-major
    /// blocks; `bias` has shape `(cout, 1, 1)`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(weight), self.shape(bias));
        let cin = xs.channels;
        if ws.height != ws.width || ws.channels % cin != 0 || ws.channels == 0 {
            return Err(Error::contract(format!(
                "conv2d weight {ws} incompatible with {cin} input channels"
            )));
        }
        let cout = ws.channels / cin;
        if bs != Shape::new(cout, 1, 1) {
            return Err(Error::contract(format!("conv2d bias {bs}, expected {cout}x1x1")));
        }
        let k = ws.height;
        if spec.stride == 0 {
            return Err(Error::contract("conv2d stride must be positive"));
        }
        let pad = match spec.padding {
            Padding::Same => k / 2,
            Padding::Valid => 0,
        };
        if xs.height + 2 * pad < k || xs.width + 2 * pad < k {
            return Err(Error::contract(format!("conv2d kernel {k} larger than padded input {xs}")));
        }
        let g = ConvGeom {
            cin,
            cout,
            k,
            stride: spec.stride,
            pad,
            in_h: xs.height,
            in_w: xs.width,
            out_h: (xs.height + 2 * pad - k) / spec.stride + 1,
            out_w: (xs.width + 2 * pad - k) / spec.stride + 1,
        };
        let out = conv_forward(&g, self.value(x).data(), self.value(weight).data(), self.value(bias).data());
        let shape = Shape::new(cout, g.out_h, g.out_w);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Conv2d(x, weight, bias, Arc::new(g)),
            &[x, weight, bias],
        ))
    }

    /// Bilinear resampling with half-pixel centres (`align_corners = false`).
    ///
    /// Output coordinate `o` samples input position `(o + 0.5) * in / out - 0.5`,
    /// clamped to `[0, in - 1]`, and blends the two neighbouring samples
    /// linearly.
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::contract("bilinear_resize output must be non-empty"));
        }
        let s = self.shape(x);
        let ty = Arc::new(bilinear_taps(s.height, out_h));
        let tx = Arc::new(bilinear_taps(s.width, out_w));
        let src = self.value(x);
        let o = Shape::new(s.channels, out_h, out_w);
        let mut out = Vec::with_capacity(o.numel());
        for c in 0..s.channels {
            let p = src.channel(c);
            for &(y0, y1, fy) in ty.iter() {
                let (fy, gy) = (t::<T>(fy), t::<T>(1.0 - fy));
                for &(x0, x1, fx) in tx.iter() {
                    let (fx, gx) = (t::<T>(fx), t::<T>(1.0 - fx));
                    let top = gx * p[y0 * s.width + x0] + fx * p[y0 * s.width + x1];
                    let bot = gx * p[y1 * s.width + x0] + fx * p[y1 * s.width + x1];
                    out.push(gy * top + fy * bot);
                }
            }
        }
        Ok(self.push(Tensor::from_parts(o, out), Op::Bilinear(x, ty, tx), &[x]))
    }

    /// `(C s^2, H, W) -> (C, sH, sW)`.
    pub fn pixel_shuffle(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = pixel_shuffle(self.value(x), factor)?;
        Ok(self.push(out, Op::PixelShuffle(x, factor), &[x]))
    }

    /// Stacks inputs along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat of nothing"))?;
        let (h, w) = (self.shape(first).height, self.shape(first).width);
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if (s.height, s.width) != (h, w) {
                return Err(Error::contract(format!(
                    "concat spatial mismatch {}x{} vs {}x{}",
                    s.height, s.width, h, w
                )));
            }
            channels += s.channels;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(
            Tensor::from_parts(Shape::new(channels, h, w), data),
            Op::Concat(parts.to_vec()),
            parts,
        ))
    }

    /// Per-channel normalization to zero mean and unit variance, no affine part.
    pub fn instance_norm(&mut self, x: Var, eps: T) -> Var {
        let s = self.shape(x);
        let n = t::<T>(s.plane() as f64);
        let src = self.value(x);
        let mut out = Vec::with_capacity(s.numel());
        for c in 0..s.channels {
            let p = src.channel(c);
            let mean = p.iter().copied().sum::<T>() / n;
            let var = p.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = (var + eps).sqrt().recip();
            out.extend(p.iter().map(|&v| (v - mean) * inv));
        }
        self.push(Tensor::from_parts(s, out), Op::InstanceNorm(x, eps), &[x])
    }

    /// Sign pattern of every ReLU/|.|/norm input on the tape.
    pub fn kink_signature(&self) -> KinkSignature {
        let mut bits = Vec::new();
        let mut word = 0u64;
        let mut used = 0;
        let mut push = |b: bool| {
            word = (word << 1) | b as u64;
            used += 1;
            if used == 64 {
                bits.push(word);
                word = 0;
                used = 0;
            }
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) | Op::LeakyRelu(a, _) | Op::Abs(a) => {
                    for &v in self.nodes[a.0].value.data() {
                        push(v > T::zero());
                        push(v < T::zero());
                    }
                }
                Op::Norm2(_) => push(node.value.item() > T::zero()),
                _ => {}
            }
        }
        bits.push(word);
        KinkSignature(bits)
    }

    /// Reverse pass from a one-element `root` with seed 1.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.shape(root).numel() != 1 {
            return Err(Error::contract(format!(
                "backward root must be a scalar, got {}",
                self.shape(root)
            )));
        }
        self.backward_with(root, Tensor::scalar(T::one()))
    }

    /// Reverse pass with an explicit upstream gradient for `root`.
    pub fn backward_with(&self, root: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.shape(root) {
            return Err(Error::contract("backward seed shape differs from root"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::numerical(format!("non-finite gradient at node {i}")));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: &Var| &self.nodes[v.0].value;
        let mut acc = |v: &Var, d: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(a, g.clone());
                acc(b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(a, g.clone());
                acc(b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(a, g.zip_map(val(b), |x, y| x * y));
                acc(b, g.zip_map(val(a), |x, y| x * y));
            }
            Op::Div(a, b) => {
                let bv = val(b);
                acc(a, g.zip_map(bv, |x, y| x / y));
                // d(a/b)/db = -out / b
                let t = g.zip_map(&node.value, |x, o| x * o);
                acc(b, t.zip_map(bv, |x, y| -x / y));
            }
            Op::AddScalar(a) => acc(a, g.clone()),
            Op::MulScalar(a, s) => {
                let s = *s;
                acc(a, g.map(|x| x * s));
            }
            Op::Square(a) => acc(a, g.zip_map(val(a), |x, v| x * (v + v))),
            Op::Abs(a) => acc(
                a,
                g.zip_map(val(a), |x, v| {
                    if v > T::zero() {
                        x
                    } else if v < T::zero() {
                        -x
                    } else {
                        T::zero()
                    }
                }),
            ),
            Op::Relu(a) => acc(a, g.zip_map(val(a), |x, v| if v > T::zero() { x } else { T::zero() })),
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                acc(a, g.zip_map(val(a), |x, v| if v > T::zero() { x } else { s * x }));
            }
            Op::Sum(a) => acc(a, Tensor::filled(self.shape(*a), g.item())),
            Op::Mean(a) => {
                let n = t::<T>(self.shape(*a).numel() as f64);
                acc(a, Tensor::filled(self.shape(*a), g.item() / n));
            }
            Op::Norm2(a) => {
                let norm = node.value.item();
                if norm > T::zero() {
                    let k = g.item() / norm;
                    acc(a, val(a).map(|v| v * k));
                } else {
                    acc(a, Tensor::zeros(self.shape(*a)));
                }
            }
            Op::BoxMean(a, r) => acc(a, box_mean_adjoint(g, *r)),
            Op::GaussianBlur(a, kernel) => acc(a, blur_adjoint(g, kernel)),
            Op::DiffX(a) => {
                let s = self.shape(*a);
                let mut d = vec![T::zero(); s.numel()];
                let gd = g.data();
                for row in 0..s.channels * s.height {
                    for x in 0..s.width - 1 {
                        let gv = gd[row * (s.width - 1) + x];
                        d[row * s.width + x + 1] = d[row * s.width + x + 1] + gv;
                        d[row * s.width + x] = d[row * s.width + x] - gv;
                    }
                }
                acc(a, Tensor::from_parts(s, d));
            }
            Op::DiffY(a) => {
                let s = self.shape(*a);
                let mut d = vec![T::zero(); s.numel()];
                let gd = g.data();
                for c in 0..s.channels {
                    for y in 0..s.height - 1 {
                        for x in 0..s.width {
                            let gv = gd[(c * (s.height - 1) + y) * s.width + x];
                            let lo = (c * s.height + y) * s.width + x;
                            d[lo + s.width] = d[lo + s.width] + gv;
                            d[lo] = d[lo] - gv;
                        }
                    }
                }
                acc(a, Tensor::from_parts(s, d));
            }
            Op::Conv2d(x, w, b, geom) => {
                let gd = g.data();
                if self.nodes[x.0].requires_grad {
                    let dx = conv_backward_input(geom, gd, val(w).data());
                    acc(x, Tensor::from_parts(self.shape(*x), dx));
                }
                if self.nodes[w.0].requires_grad {
                    let dw = conv_backward_weight(geom, gd, val(x).data());
                    acc(w, Tensor::from_parts(self.shape(*w), dw));
                }
                if self.nodes[b.0].requires_grad {
                    let plane = geom.out_h * geom.out_w;
                    let db = (0..geom.cout)
                        .map(|c| gd[c * plane..(c + 1) * plane].iter().copied().sum())
                        .collect();
                    acc(b, Tensor::from_parts(self.shape(*b), db));
                }
            }
            Op::Bilinear(x, ty, tx) => {
                let s = self.shape(*x);
                let mut d = vec![T::zero(); s.numel()];
                let gd = g.data();
                let (oh, ow) = (ty.len(), tx.len());
                for c in 0..s.channels {
                    let base = c * s.plane();
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        let (fy, gy) = (t::<T>(fy), t::<T>(1.0 - fy));
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let (fx, gx) = (t::<T>(fx), t::<T>(1.0 - fx));
                            let v = gd[(c * oh + oy) * ow + ox];
                            d[base + y0 * s.width + x0] = d[base + y0 * s.width + x0] + gy * gx * v;
                            d[base + y0 * s.width + x1] = d[base + y0 * s.width + x1] + gy * fx * v;
                            d[base + y1 * s.width + x0] = d[base + y1 * s.width + x0] + fy * gx * v;
                            d[base + y1 * s.width + x1] = d[base + y1 * s.width + x1] + fy * fx * v;
                        }
                    }
                }
                acc(x, Tensor::from_parts(s, d));
            }
            Op::PixelShuffle(x, f) => {
                acc(x, pixel_unshuffle(g, *f).expect("shape checked in forward"));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.shape(*p).numel();
                    acc(p, Tensor::from_parts(self.shape(*p), g.data()[offset..offset + n].to_vec()));
                    offset += n;
                }
            }
            Op::InstanceNorm(x, eps) => {
                let s = self.shape(*x);
                let n = t::<T>(s.plane() as f64);
                let xv = val(x);
                let mut d = Vec::with_capacity(s.numel());
                for c in 0..s.channels {
                    let p = xv.channel(c);
                    let mean = p.iter().copied().sum::<T>() / n;
                    let var = p.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                    let inv = (var + *eps).sqrt().recip();
                    let y = node.value.channel(c);
                    let gc = g.channel(c);
                    let mean_g = gc.iter().copied().sum::<T>() / n;
                    let mean_gy = gc.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>() / n;
                    d.extend(gc.iter().zip(y).map(|(&gi, &yi)| inv * (gi - mean_g - yi * mean_gy)));
                }
                acc(x, Tensor::from_parts(s, d));
            }
        }
    }
}

fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

/// Box mean is `D S` with `S` the symmetric window-sum operator and `D` the
/// inverse counts, so its adjoint is `S D = count * box_mean(g / count)`.
fn box_mean_adjoint<T: Scalar>(g: &Tensor<T>, r: usize) -> Tensor<T> {
    let s = g.shape();
    let counts: Vec<T> = (0..s.height)
        .flat_map(|y| {
            (0..s.width).map(move |x| {
                let ny = (y + r).min(s.height - 1) - y.saturating_sub(r) + 1;
                let nx = (x + r).min(s.width - 1) - x.saturating_sub(r) + 1;
                t::<T>((nx * ny) as f64)
            })
        })
        .collect();
    let mut out = vec![T::zero(); s.numel()];
    let mut scaled = vec![T::zero(); s.plane()];
    for (c, dst) in out.chunks_mut(s.plane()).enumerate() {
        for ((d, &gv), &n) in scaled.iter_mut().zip(g.channel(c)).zip(&counts) {
            *d = gv / n;
        }
        box_mean_plane(&scaled, s.width, s.height, r, dst);
        for (d, &n) in dst.iter_mut().zip(&counts) {
            *d = *d * n;
        }
    }
    Tensor::from_parts(s, out)
}

/// Normalized blur is `D K` with `K` symmetric; the adjoint is `K (g / norm)`.
fn blur_adjoint<T: Scalar>(g: &Tensor<T>, kernel: &[f64]) -> Tensor<T> {
    let s = g.shape();
    let ones = vec![T::one(); s.plane()];
    let mut norm = vec![T::zero(); s.plane()];
    separable_filter_plane(&ones, s.width, s.height, kernel, false, &mut norm);
    let mut out = vec![T::zero(); s.numel()];
    let mut scaled = vec![T::zero(); s.plane()];
    for (c, dst) in out.chunks_mut(s.plane()).enumerate() {
        for ((d, &gv), &n) in scaled.iter_mut().zip(g.channel(c)).zip(&norm) {
            *d = gv / n;
        }
        separable_filter_plane(&scaled, s.width, s.height, kernel, false, dst);
    }
    Tensor::from_parts(s, out)
}

/// Output columns `ox` whose input column `ox * stride + k - pad` is in bounds.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    // need 0 <= o*stride + k - pad < n_in
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if n_in + pad > k {
        ((n_in + pad - k - 1) / stride + 1).min(n_out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn conv_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let plane_out = g.out_h * g.out_w;
    let plane_in = g.in_h * g.in_w;
    let mut out = vec![T::zero(); g.cout * plane_out];
    out.par_chunks_mut(plane_out).enumerate().for_each(|(co, dst)| {
        dst.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..g.cin {
            let xin = &x[ci * plane_in..(ci + 1) * plane_in];
            let wk = &w[(co * g.cin + ci) * g.k * g.k..][..g.k * g.k];
            for ky in 0..g.k {
                let (oy0, oy1) = valid_range(ky, g.pad, g.stride, g.in_h, g.out_h);
                for kx in 0..g.k {
                    let wv = wk[ky * g.k + kx];
                    let (ox0, ox1) = valid_range(kx, g.pad, g.stride, g.in_w, g.out_w);
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let row_in = &xin[iy * g.in_w..(iy + 1) * g.in_w];
                        let row_out = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        if g.stride == 1 {
                            let ix0 = ox0 + kx - g.pad;
                            for (o, &i) in row_out[ox0..ox1].iter_mut().zip(&row_in[ix0..]) {
                                *o = *o + wv * i;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kx - g.pad;
                                row_out[ox] = row_out[ox] + wv * row_in[ix];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn conv_backward_input<T: Scalar>(g: &ConvGeom, gout: &[T], w: &[T]) -> Vec<T> {
    let plane_out = g.out_h * g.out_w;
    let plane_in = g.in_h * g.in_w;
    let mut dx = vec![T::zero(); g.cin * plane_in];
    dx.par_chunks_mut(plane_in).enumerate().for_each(|(ci, dst)| {
        for co in 0..g.cout {
            let go = &gout[co * plane_out..(co + 1) * plane_out];
            let wk = &w[(co * g.cin + ci) * g.k * g.k..][..g.k * g.k];
            for ky in 0..g.k {
                let (oy0, oy1) = valid_range(ky, g.pad, g.stride, g.in_h, g.out_h);
                for kx in 0..g.k {
                    let wv = wk[ky * g.k + kx];
                    let (ox0, ox1) = valid_range(kx, g.pad, g.stride, g.in_w, g.out_w);
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let row_g = &go[oy * g.out_w..(oy + 1) * g.out_w];
                        let row_d = &mut dst[iy * g.in_w..(iy + 1) * g.in_w];
                        if g.stride == 1 {
                            let ix0 = ox0 + kx - g.pad;
                            for (d, &gv) in row_d[ix0..].iter_mut().zip(&row_g[ox0..ox1]) {
                                *d = *d + wv * gv;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kx - g.pad;
                                row_d[ix] = row_d[ix] + wv * row_g[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

fn conv_backward_weight<T: Scalar>(g: &ConvGeom, gout: &[T], x: &[T]) -> Vec<T> {
    let plane_out = g.out_h * g.out_w;
    let plane_in = g.in_h * g.in_w;
    let kk = g.k * g.k;
    let mut dw = vec![T::zero(); g.cout * g.cin * kk];
    dw.par_chunks_mut(g.cin * kk).enumerate().for_each(|(co, dst)| {
        let go = &gout[co * plane_out..(co + 1) * plane_out];
        for ci in 0..g.cin {
            let xin = &x[ci * plane_in..(ci + 1) * plane_in];
            for ky in 0..g.k {
                let (oy0, oy1) = valid_range(ky, g.pad, g.stride, g.in_h, g.out_h);
                for kx in 0..g.k {
                    let (ox0, ox1) = valid_range(kx, g.pad, g.stride, g.in_w, g.out_w);
                    let mut s = T::zero();
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let row_in = &xin[iy * g.in_w..(iy + 1) * g.in_w];
                        let row_g = &go[oy * g.out_w..(oy + 1) * g.out_w];
                        if g.stride == 1 {
                            let ix0 = ox0 + kx - g.pad;
                            s = s + row_g[ox0..ox1]
                                .iter()
                                .zip(&row_in[ix0..])
                                .map(|(&a, &b)| a * b)
                                .sum::<T>();
                        } else {
                            for ox in ox0..ox1 {
                                s = s + row_g[ox] * row_in[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                    dst[ci * kk + ky * g.k + kx] = s;
                }
            }
        }
    });
    dw
}

/// `(C s^2, H, W) -> (C, sH, sW)`: output `(c, h s + i, w s + j)` reads input
/// channel `c s^2 + i s + j` at `(h, w)`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    let f2 = factor * factor;
    if factor == 0 || s.channels % f2 != 0 {
        return Err(Error::contract(format!(
            "pixel_shuffle: {} channels not divisible by {factor}^2",
            s.channels
        )));
    }
    let o = Shape::new(s.channels / f2, s.height * factor, s.width * factor);
    let mut out = vec![T::zero(); o.numel()];
    let src = x.data();
    for c in 0..o.channels {
        for i in 0..factor {
            for j in 0..factor {
                let ic = c * f2 + i * factor + j;
                for h in 0..s.height {
                    for w in 0..s.width {
                        out[(c * o.height + h * factor + i) * o.width + w * factor + j] =
                            src[(ic * s.height + h) * s.width + w];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(o, out))
}

/// Exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if factor == 0 || s.height % factor != 0 || s.width % factor != 0 {
        return Err(Error::contract(format!(
            "pixel_unshuffle: {}x{} not divisible by {factor}",
            s.height, s.width
        )));
    }
    let f2 = factor * factor;
    let o = Shape::new(s.channels * f2, s.height / factor, s.width / factor);
    let mut out = vec![T::zero(); o.numel()];
    let src = x.data();
    for c in 0..s.channels {
        for i in 0..factor {
            for j in 0..factor {
                let oc = c * f2 + i * factor + j;
                for h in 0..o.height {
                    for w in 0..o.width {
                        out[(oc * o.height + h) * o.width + w] =
                            src[(c * s.height + h * factor + i) * s.width + w * factor + j];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(o, out))
}
