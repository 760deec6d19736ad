//! Guidance-map generators.
//!
//! Two miniature architectures, both taking the degraded image and the guide
//! through separate encoding paths:
//!
//! * `unet-mini` runs at the label resolution on the (upsampled) input. Two
//!   identical encoders, one per modality, are concatenated at every level
//!   (or only at the bottleneck) and decoded U-Net style.
//! * `wdsr-mini` runs at the input resolution: a head conv on the input, a
//!   guide pre-encoder that brings the guide to the same resolution with two
//!   stride-2 blocks, wide-activation residual blocks, and pixel-shuffle
//!   tails. Its output adds a residual path from the upsampled input and a
//!   second one from the guide features.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{ConvSpec, Graph, Padding, Shape, Tensor, Var};
use crate::error::{Error, Result};
use crate::image::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    UnetMini,
    WdsrMini,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upsample {
    /// Bilinear x2 resize followed by a 3x3 convolution.
    BilinearConv,
    PixelShuffle,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    None,
    Instance,
}

/// Where the two encoder paths of `unet-mini` are concatenated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    /// Every skip connection carries both modalities.
    AllLevels,
    /// Skips carry the input path only; the guide joins at the bottleneck.
    Bottleneck,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub architecture: Architecture,
    pub task: Task,
    /// Resolution levels of each `unet-mini` encoder.
    pub encoder_depth: usize,
    pub base_channels: usize,
    pub fusion: Fusion,
    pub upsample: Upsample,
    pub activation: Activation,
    pub normalization: Normalization,
    /// Residual blocks in the `wdsr-mini` body.
    pub res_blocks: usize,
    /// Width multiplier inside a `wdsr-mini` residual block.
    pub expansion: usize,
    /// Adds the (upsampled) input to the `unet-mini` output.
    pub input_residual: bool,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn unet_mini(task: Task) -> Self {
        Self {
            architecture: Architecture::UnetMini,
            task,
            encoder_depth: 2,
            base_channels: 8,
            fusion: Fusion::AllLevels,
            upsample: Upsample::BilinearConv,
            activation: Activation::Relu,
            normalization: Normalization::None,
            res_blocks: 0,
            expansion: 1,
            input_residual: true,
            seed: 0,
        }
    }

    pub fn wdsr_mini(task: Task) -> Self {
        Self {
            architecture: Architecture::WdsrMini,
            task,
            encoder_depth: 2,
            base_channels: 16,
            fusion: Fusion::AllLevels,
            upsample: Upsample::PixelShuffle,
            activation: Activation::Relu,
            normalization: Normalization::None,
            res_blocks: 4,
            expansion: 2,
            input_residual: true,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::config("base_channels must be positive"));
        }
        if let Activation::LeakyRelu(s) = self.activation {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::config(format!("leaky-relu slope {s} outside [0, 1)")));
            }
        }
        match self.architecture {
            Architecture::UnetMini => {
                if self.encoder_depth == 0 || self.encoder_depth > 5 {
                    return Err(Error::config("unet-mini encoder_depth must be in 1..=5"));
                }
            }
            Architecture::WdsrMini => {
                if self.upsample != Upsample::PixelShuffle {
                    return Err(Error::config("wdsr-mini upsamples by pixel shuffle only"));
                }
                if self.res_blocks == 0 || self.expansion == 0 {
                    return Err(Error::config("wdsr-mini needs res_blocks >= 1 and expansion >= 1"));
                }
                if !self.input_residual {
                    return Err(Error::config("wdsr-mini always carries the input residual"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ConvLayer {
    cin: usize,
    cout: usize,
    k: usize,
    /// Index of the weight in the parameter list; the bias follows it.
    param: usize,
}

/// Generator with its named parameters.
#[derive(Clone, Debug)]
pub struct Network {
    config: GeneratorConfig,
    names: Vec<String>,
    params: Vec<Tensor<f64>>,
    layers: HashMap<String, ConvLayer>,
}

struct Builder {
    names: Vec<String>,
    params: Vec<Tensor<f64>>,
    layers: HashMap<String, ConvLayer>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        let fan_in = (cin * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
        let shape = Shape::new(cout * cin, k, k);
        let w = (0..shape.numel()).map(|_| normal.sample(&mut self.rng)).collect();
        self.push(name, cin, cout, k, Tensor::new(shape, w).unwrap());
    }

    /// Output layer feeding a residual sum: starts at zero so the untrained
    /// network returns its residual input.
    fn conv_zero(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        self.push(name, cin, cout, k, Tensor::zeros(Shape::new(cout * cin, k, k)));
    }

    fn push(&mut self, name: &str, cin: usize, cout: usize, k: usize, weight: Tensor<f64>) {
        let param = self.params.len();
        self.names.push(format!("{name}.weight"));
        self.params.push(weight);
        self.names.push(format!("{name}.bias"));
        self.params.push(Tensor::zeros(Shape::new(cout, 1, 1)));
        self.layers.insert(name.to_string(), ConvLayer { cin, cout, k, param });
    }
}

fn unet_channels(base: usize, level: usize) -> usize {
    base << level
}

/// Creates a generator with He fan-in normal weights and zero biases drawn
/// from `config.seed`. Output layers of residual networks start at zero.
pub fn build_generator(config: &GeneratorConfig) -> Result<Network> {
    config.validate()?;
    let mut b = Builder {
        names: Vec::new(),
        params: Vec::new(),
        layers: HashMap::new(),
        rng: ChaCha8Rng::seed_from_u64(config.seed),
    };
    let c = config.base_channels;
    match config.architecture {
        Architecture::UnetMini => {
            let depth = config.encoder_depth;
            for path in ["enc_in", "enc_guide"] {
                for level in 0..depth {
                    let ch = unet_channels(c, level);
                    let prev = if level == 0 { 1 } else { unet_channels(c, level - 1) };
                    b.conv(&format!("{path}.{level}.a"), prev, ch, 3);
                    b.conv(&format!("{path}.{level}.b"), ch, ch, 3);
                }
            }
            let skip_ch = |level: usize| {
                let ch = unet_channels(c, level);
                if config.fusion == Fusion::AllLevels || level == depth - 1 {
                    2 * ch
                } else {
                    ch
                }
            };
            let mut ch = skip_ch(depth - 1);
            for level in (0..depth - 1).rev() {
                let target = unet_channels(c, level);
                match config.upsample {
                    Upsample::BilinearConv => b.conv(&format!("dec.{level}.up"), ch, target, 3),
                    Upsample::PixelShuffle => b.conv(&format!("dec.{level}.up"), ch, 4 * target, 3),
                }
                b.conv(&format!("dec.{level}.fuse"), target + skip_ch(level), target, 3);
                ch = target;
            }
            if config.input_residual {
                b.conv_zero("out", ch, 1, 1);
            } else {
                b.conv("out", ch, 1, 1);
            }
        }
        Architecture::WdsrMini => {
            let s = config.task.scale();
            let wide = c * config.expansion;
            b.conv("head", 1, c, 3);
            b.conv("guide_enc.0", 1, c, 3);
            b.conv("guide_enc.1", c, c, 3);
            b.conv("fuse", 2 * c, c, 1);
            for i in 0..config.res_blocks {
                b.conv(&format!("body.{i}.expand"), c, wide, 3);
                b.conv(&format!("body.{i}.reduce"), wide, c, 3);
            }
            b.conv_zero("tail", c, s * s, 3);
            b.conv_zero("guide_skip", c, s * s, 3);
        }
    }
    Ok(Network {
        config: config.clone(),
        names: b.names,
        params: b.params,
        layers: b.layers,
    })
}

impl Network {
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<f64>] {
        &mut self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    /// Replaces all parameters; names and shapes must match.
    pub fn set_params(&mut self, params: Vec<Tensor<f64>>) -> Result<()> {
        if params.len() != self.params.len()
            || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::contract("parameter list does not match network layout"));
        }
        self.params = params;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Adds every parameter to `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph<f64>) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.clone())).collect()
    }

    /// Adds every parameter to `g` as a constant.
    pub fn bind_frozen(&self, g: &mut Graph<f64>) -> Vec<Var> {
        self.params.iter().map(|p| g.constant(p.clone())).collect()
    }

    fn conv(&self, g: &mut Graph<f64>, p: &[Var], name: &str, x: Var, spec: ConvSpec) -> Result<Var> {
        let layer = &self.layers[name];
        debug_assert_eq!(g.shape(x).channels, layer.cin, "{name}");
        debug_assert_eq!(g.shape(p[layer.param]).height, layer.k);
        let y = g.conv2d(x, p[layer.param], p[layer.param + 1], spec)?;
        debug_assert_eq!(g.shape(y).channels, layer.cout);
        Ok(y)
    }

    fn act(&self, g: &mut Graph<f64>, x: Var) -> Var {
        match self.config.activation {
            Activation::Relu => g.relu(x),
            Activation::LeakyRelu(s) => g.leaky_relu(x, s),
        }
    }

    fn norm(&self, g: &mut Graph<f64>, x: Var) -> Var {
        match self.config.normalization {
            Normalization::None => x,
            Normalization::Instance => g.instance_norm(x, 1e-5),
        }
    }

    /// conv -> norm -> activation
    fn block(&self, g: &mut Graph<f64>, p: &[Var], name: &str, x: Var, spec: ConvSpec) -> Result<Var> {
        let y = self.conv(g, p, name, x, spec)?;
        let y = self.norm(g, y);
        Ok(self.act(g, y))
    }

    /// Builds the generator on `g`.
    ///
    /// `input` is the degraded image at its native resolution, `input_up` the
    /// same image brought to label resolution (identical to `input` for
    /// denoising) and `guide` the second modality at label resolution. `p`
    /// comes from [`bind`](Self::bind) or [`bind_frozen`](Self::bind_frozen).
    /// Returns a single-channel map at label resolution.
    pub fn forward(&self, g: &mut Graph<f64>, p: &[Var], input: Var, input_up: Var, guide: Var) -> Result<Var> {
        self.forward_with_base(g, p, input, input_up, guide, input_up)
    }

    /// As [`forward`](Self::forward) with the residual path carrying `base`
    /// instead of `input_up`. Ignored when the network has no residual path.
    pub fn forward_with_base(
        &self,
        g: &mut Graph<f64>,
        p: &[Var],
        input: Var,
        input_up: Var,
        guide: Var,
        base: Var,
    ) -> Result<Var> {
        if p.len() != self.params.len() {
            return Err(Error::contract("parameter binding has wrong length"));
        }
        let (su, sg) = (g.shape(input_up), g.shape(guide));
        if su != sg || su.channels != 1 {
            return Err(Error::contract(format!(
                "generator needs single-channel input_up/guide of equal size, got {su} and {sg}"
            )));
        }
        let s = self.config.task.scale();
        let si = g.shape(input);
        if si.channels != 1 || si.height * s != su.height || si.width * s != su.width {
            return Err(Error::contract(format!(
                "input {si} does not match label size {su} at scale {s}"
            )));
        }
        if g.shape(base) != su {
            return Err(Error::contract(format!("residual base {} must match {su}", g.shape(base))));
        }
        match self.config.architecture {
            Architecture::UnetMini => self.forward_unet(g, p, input_up, guide, base),
            Architecture::WdsrMini => self.forward_wdsr(g, p, input, guide, base),
        }
    }

    fn forward_unet(&self, g: &mut Graph<f64>, p: &[Var], input_up: Var, guide: Var, base: Var) -> Result<Var> {
        let depth = self.config.encoder_depth;
        if self.config.upsample == Upsample::PixelShuffle {
            let sh = g.shape(input_up);
            let d = 1 << (depth - 1);
            if sh.height % d != 0 || sh.width % d != 0 {
                return Err(Error::contract(format!(
                    "pixel-shuffle decoder needs sides divisible by {d}, got {sh}"
                )));
            }
        }
        let encode = |g: &mut Graph<f64>, path: &str, x: Var| -> Result<Vec<Var>> {
            let mut feats = Vec::with_capacity(depth);
            let mut h = x;
            for level in 0..depth {
                let spec = if level == 0 { ConvSpec::SAME } else { ConvSpec::strided(2) };
                h = self.block(g, p, &format!("{path}.{level}.a"), h, spec)?;
                h = self.block(g, p, &format!("{path}.{level}.b"), h, ConvSpec::SAME)?;
                feats.push(h);
            }
            Ok(feats)
        };
        let fa = encode(g, "enc_in", input_up)?;
        let fb = encode(g, "enc_guide", guide)?;
        let mut skips = Vec::with_capacity(depth);
        for level in 0..depth {
            if self.config.fusion == Fusion::AllLevels || level == depth - 1 {
                skips.push(g.concat(&[fa[level], fb[level]])?);
            } else {
                skips.push(fa[level]);
            }
        }
        let mut h = skips[depth - 1];
        for level in (0..depth - 1).rev() {
            let name = format!("dec.{level}.up");
            let target = g.shape(skips[level]);
            h = match self.config.upsample {
                Upsample::BilinearConv => {
                    let up = g.bilinear_resize(h, target.height, target.width)?;
                    self.block(g, p, &name, up, ConvSpec::SAME)?
                }
                Upsample::PixelShuffle => {
                    let y = self.conv(g, p, &name, h, ConvSpec::SAME)?;
                    let y = g.pixel_shuffle(y, 2)?;
                    let y = self.norm(g, y);
                    self.act(g, y)
                }
            };
            let cat = g.concat(&[h, skips[level]])?;
            h = self.block(g, p, &format!("dec.{level}.fuse"), cat, ConvSpec::SAME)?;
        }
        let out = self.conv(
            g,
            p,
            "out",
            h,
            ConvSpec {
                stride: 1,
                padding: Padding::Valid,
            },
        )?;
        if self.config.input_residual {
            g.add(out, base)
        } else {
            Ok(out)
        }
    }

    fn forward_wdsr(&self, g: &mut Graph<f64>, p: &[Var], input: Var, guide: Var, base: Var) -> Result<Var> {
        let s = self.config.task.scale();
        let stride = if s > 1 { 2 } else { 1 };
        if s > 1 && s != 4 {
            return Err(Error::config("wdsr-mini guide encoder supports scale 1 or 4"));
        }
        let head = self.conv(g, p, "head", input, ConvSpec::SAME)?;
        let ge = self.block(g, p, "guide_enc.0", guide, ConvSpec::strided(stride))?;
        let ge = self.block(g, p, "guide_enc.1", ge, ConvSpec::strided(stride))?;
        if g.shape(ge).height != g.shape(head).height || g.shape(ge).width != g.shape(head).width {
            return Err(Error::contract(format!(
                "guide features {} do not match input features {}",
                g.shape(ge),
                g.shape(head)
            )));
        }
        let cat = g.concat(&[head, ge])?;
        let mut h = self.conv(g, p, "fuse", cat, ConvSpec { stride: 1, padding: Padding::Valid })?;
        for i in 0..self.config.res_blocks {
            let y = self.block(g, p, &format!("body.{i}.expand"), h, ConvSpec::SAME)?;
            let y = self.conv(g, p, &format!("body.{i}.reduce"), y, ConvSpec::SAME)?;
            h = g.add(h, y)?;
        }
        let tail = self.conv(g, p, "tail", h, ConvSpec::SAME)?;
        let tail = g.pixel_shuffle(tail, s)?;
        let skip = self.conv(g, p, "guide_skip", ge, ConvSpec::SAME)?;
        let skip = g.pixel_shuffle(skip, s)?;
        let y = g.add(tail, skip)?;
        g.add(y, base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wdsr_rejects_bilinear_decoder() {
        let mut cfg = GeneratorConfig::wdsr_mini(Task::SuperResolution);
        cfg.upsample = Upsample::BilinearConv;
        assert!(matches!(build_generator(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = GeneratorConfig::unet_mini(Task::Denoising).with_seed(3);
        let a = build_generator(&cfg).unwrap();
        let b = build_generator(&cfg).unwrap();
        assert_eq!(a.params(), b.params());
        let c = build_generator(&cfg.clone().with_seed(4)).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn names_are_unique() {
        let net = build_generator(&GeneratorConfig::wdsr_mini(Task::SuperResolution)).unwrap();
        let mut names = net.param_names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), net.param_names().len());
    }
}
