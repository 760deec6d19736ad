//! Canonical `key = value` text used by run configurations and checkpoints.
//!
//! One entry per line, `#` starts a comment, keys are unique. Writers emit
//! keys in a fixed order and floats in shortest round-trip form, so equal
//! values always serialize to equal bytes.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::degrade::{NoiseKind, NoiseSpec};
use crate::error::{Error, Result};
use crate::guided::GuidedFilterParams;
use crate::image::Task;
use crate::net::{Activation, Architecture, Fusion, GeneratorConfig, Normalization, Upsample};
use crate::phantom::PhantomSpec;
use crate::pipeline::Variant;
use crate::train::{LossSpec, TrainConfig};

/// Ordered key-value writer.
#[derive(Clone, Debug, Default)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.out.push_str(key);
        self.out.push_str(" = ");
        self.out.push_str(&value.to_string());
        self.out.push('\n');
        self
    }

    pub fn put_f64(&mut self, key: &str, value: f64) -> &mut Self {
        self.put(key, fmt_f64(value))
    }

    pub fn finish(self) -> String {
        self.out
    }
}

/// Shortest text that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Parsed key-value text. Consumers take the keys they know;
/// [`finish`](Self::finish) rejects whatever is left.
#[derive(Clone, Debug)]
pub struct KvReader {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvReader {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::config(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(k.to_string(), (i + 1, v.to_string())).is_some() {
                return Err(Error::config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(format!("line {line}: bad value `{v}` for `{key}`"))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?
            .ok_or_else(|| Error::config(format!("missing key `{key}`")))
    }

    /// Applies `parse` to the value of `key` if present.
    pub fn take_with<T>(&mut self, key: &str, parse: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => parse(&v)
                .map(Some)
                .map_err(|e| Error::config(format!("line {line}: `{key}`: {e}"))),
        }
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.entries.keys().any(|k| k.starts_with(prefix))
    }

    pub fn finish(self) -> Result<()> {
        match self.entries.iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(Error::config(format!("line {line}: unknown key `{k}`"))),
        }
    }
}

/// Comma-separated list.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Error::config(format!("bad list item `{t}`"))))
        .collect()
}

pub fn fmt_list<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn fmt_f64_list(items: &[f64]) -> String {
    items.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(",")
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!("expected true or false, got `{s}`"))),
    }
}

pub fn architecture_str(a: Architecture) -> &'static str {
    match a {
        Architecture::UnetMini => "unet-mini",
        Architecture::WdsrMini => "wdsr-mini",
    }
}

pub fn parse_architecture(s: &str) -> Result<Architecture> {
    match s {
        "unet-mini" => Ok(Architecture::UnetMini),
        "wdsr-mini" => Ok(Architecture::WdsrMini),
        _ => Err(Error::config(format!("unknown architecture `{s}`"))),
    }
}

fn activation_str(a: Activation) -> String {
    match a {
        Activation::Relu => "relu".into(),
        Activation::LeakyRelu(s) => format!("leaky-relu:{}", fmt_f64(s)),
    }
}

fn parse_activation(s: &str) -> Result<Activation> {
    if s == "relu" {
        return Ok(Activation::Relu);
    }
    let slope = s
        .strip_prefix("leaky-relu:")
        .ok_or_else(|| Error::config(format!("unknown activation `{s}`")))?;
    slope
        .parse()
        .map(Activation::LeakyRelu)
        .map_err(|_| Error::config(format!("bad leaky-relu slope `{slope}`")))
}

/// `none`, `poisson:<photons_at_white>` or `gaussian:<sigma>`.
pub fn noise_kind_str(n: Option<&NoiseSpec>) -> String {
    match n.map(|n| n.kind) {
        None => "none".into(),
        Some(NoiseKind::Poisson { photons_at_white }) => format!("poisson:{}", fmt_f64(photons_at_white)),
        Some(NoiseKind::Gaussian { sigma }) => format!("gaussian:{}", fmt_f64(sigma)),
    }
}

pub fn parse_noise_kind(s: &str) -> Result<Option<NoiseKind>> {
    if s == "none" {
        return Ok(None);
    }
    let bad = || Error::config(format!("bad noise `{s}`; expected none, poisson:<n>, gaussian:<sigma> or low/medium/strong"));
    let kind = match s {
        "low" => NoiseKind::Poisson { photons_at_white: 4000.0 },
        "medium" => NoiseKind::Poisson { photons_at_white: 1000.0 },
        "strong" => NoiseKind::Poisson { photons_at_white: 250.0 },
        _ => {
            let (name, v) = s.split_once(':').ok_or_else(bad)?;
            let v: f64 = v.parse().map_err(|_| bad())?;
            match name {
                "poisson" => NoiseKind::Poisson { photons_at_white: v },
                "gaussian" => NoiseKind::Gaussian { sigma: v },
                _ => return Err(bad()),
            }
        }
    };
    Ok(Some(kind))
}

pub fn write_generator(w: &mut KvWriter, c: &GeneratorConfig) {
    w.put("generator.architecture", architecture_str(c.architecture))
        .put("generator.task", c.task.as_str())
        .put("generator.encoder_depth", c.encoder_depth)
        .put("generator.base_channels", c.base_channels)
        .put(
            "generator.fusion",
            match c.fusion {
                Fusion::AllLevels => "all-levels",
                Fusion::Bottleneck => "bottleneck",
            },
        )
        .put(
            "generator.upsample",
            match c.upsample {
                Upsample::BilinearConv => "bilinear-conv",
                Upsample::PixelShuffle => "pixel-shuffle",
            },
        )
        .put("generator.activation", activation_str(c.activation))
        .put(
            "generator.normalization",
            match c.normalization {
                Normalization::None => "none",
                Normalization::Instance => "instance",
            },
        )
        .put("generator.res_blocks", c.res_blocks)
        .put("generator.expansion", c.expansion)
        .put("generator.input_residual", c.input_residual)
        .put("generator.seed", c.seed);
}

/// Reads `generator.*` keys. Missing keys fall back to the defaults of the
/// chosen architecture for `task`.
pub fn read_generator(r: &mut KvReader, task: Task) -> Result<GeneratorConfig> {
    let task = r.take_with("generator.task", Task::parse)?.unwrap_or(task);
    let arch = r
        .take_with("generator.architecture", parse_architecture)?
        .unwrap_or(Architecture::WdsrMini);
    let mut c = match arch {
        Architecture::UnetMini => GeneratorConfig::unet_mini(task),
        Architecture::WdsrMini => GeneratorConfig::wdsr_mini(task),
    };
    c.encoder_depth = r.take_or("generator.encoder_depth", c.encoder_depth)?;
    c.base_channels = r.take_or("generator.base_channels", c.base_channels)?;
    if let Some(f) = r.take_with("generator.fusion", |s| match s {
        "all-levels" => Ok(Fusion::AllLevels),
        "bottleneck" => Ok(Fusion::Bottleneck),
        _ => Err(Error::config(format!("unknown fusion `{s}`"))),
    })? {
        c.fusion = f;
    }
    if let Some(u) = r.take_with("generator.upsample", |s| match s {
        "bilinear-conv" => Ok(Upsample::BilinearConv),
        "pixel-shuffle" => Ok(Upsample::PixelShuffle),
        _ => Err(Error::config(format!("unknown upsample `{s}`"))),
    })? {
        c.upsample = u;
    }
    if let Some(a) = r.take_with("generator.activation", parse_activation)? {
        c.activation = a;
    }
    if let Some(n) = r.take_with("generator.normalization", |s| match s {
        "none" => Ok(Normalization::None),
        "instance" => Ok(Normalization::Instance),
        _ => Err(Error::config(format!("unknown normalization `{s}`"))),
    })? {
        c.normalization = n;
    }
    c.res_blocks = r.take_or("generator.res_blocks", c.res_blocks)?;
    c.expansion = r.take_or("generator.expansion", c.expansion)?;
    if let Some(b) = r.take_with("generator.input_residual", parse_bool)? {
        c.input_residual = b;
    }
    c.seed = r.take_or("generator.seed", c.seed)?;
    c.validate()?;
    Ok(c)
}

pub fn write_gf(w: &mut KvWriter, p: &GuidedFilterParams) {
    w.put("gf.radius", p.radius()).put_f64("gf.epsilon", p.epsilon);
}

pub fn read_gf(r: &mut KvReader) -> Result<GuidedFilterParams> {
    let d = GuidedFilterParams::default();
    let p = GuidedFilterParams::new(r.take_or("gf.radius", d.radius())?, r.take_or("gf.epsilon", d.epsilon)?);
    p.validate()?;
    Ok(p)
}

/// `train.*` keys; the guided filter parameters go under `gf.*`.
pub fn write_train(w: &mut KvWriter, c: &TrainConfig) {
    w.put_f64("train.initial_lr", c.initial_lr)
        .put_f64("train.min_lr", c.min_lr)
        .put("train.patience", c.patience)
        .put_f64("train.decay", c.decay)
        .put_f64("train.threshold", c.threshold)
        .put("train.max_iterations", c.max_iterations)
        .put("train.val_every", c.val_every)
        .put("train.seed", c.seed)
        .put("train.loss", c.loss.describe())
        .put("train.variant", c.variant)
        .put("train.masked_loss", c.masked_loss);
    write_gf(w, &c.gf);
}

pub fn read_train(r: &mut KvReader) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let c = TrainConfig {
        initial_lr: r.take_or("train.initial_lr", d.initial_lr)?,
        min_lr: r.take_or("train.min_lr", d.min_lr)?,
        patience: r.take_or("train.patience", d.patience)?,
        decay: r.take_or("train.decay", d.decay)?,
        threshold: r.take_or("train.threshold", d.threshold)?,
        max_iterations: r.take_or("train.max_iterations", d.max_iterations)?,
        val_every: r.take_or("train.val_every", d.val_every)?,
        seed: r.take_or("train.seed", d.seed)?,
        loss: r.take_with("train.loss", LossSpec::parse)?.unwrap_or(d.loss),
        variant: r.take_or("train.variant", d.variant)?,
        masked_loss: r.take_with("train.masked_loss", parse_bool)?.unwrap_or(d.masked_loss),
        gf: read_gf(r)?,
    };
    c.validate()?;
    Ok(c)
}

pub fn write_phantom(w: &mut KvWriter, p: &PhantomSpec) {
    w.put("phantom.seed", p.seed)
        .put("phantom.size", p.size)
        .put("phantom.n_shapes", p.n_shapes)
        .put("phantom.contrast_a", fmt_f64_list(&[p.contrast_a.0, p.contrast_a.1]))
        .put("phantom.contrast_b", fmt_f64_list(&[p.contrast_b.0, p.contrast_b.1]))
        .put_f64("phantom.texture_amplitude", p.texture_amplitude);
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    match parse_list::<f64>(s)?.as_slice() {
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(Error::config(format!("expected `lo,hi`, got `{s}`"))),
    }
}

pub fn read_phantom(r: &mut KvReader) -> Result<PhantomSpec> {
    let d = PhantomSpec::default();
    let p = PhantomSpec {
        seed: r.take_or("phantom.seed", d.seed)?,
        size: r.take_or("phantom.size", d.size)?,
        n_shapes: r.take_or("phantom.n_shapes", d.n_shapes)?,
        contrast_a: r.take_with("phantom.contrast_a", parse_range)?.unwrap_or(d.contrast_a),
        contrast_b: r.take_with("phantom.contrast_b", parse_range)?.unwrap_or(d.contrast_b),
        texture_amplitude: r.take_or("phantom.texture_amplitude", d.texture_amplitude)?,
    };
    p.validate()?;
    Ok(p)
}

/// Adversarial attack settings.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackSpec {
    /// Weight of the residual norm penalty.
    pub lambda: f64,
    pub initial_lr: f64,
    pub min_lr: f64,
    pub iterations: usize,
    pub variant: Variant,
    /// Scale applied to the unit-normalized residuals at inference.
    pub lambda_adversarial: f64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            initial_lr: 1e-2,
            min_lr: 1e-5,
            iterations: 200,
            variant: Variant::WithGf,
            lambda_adversarial: 1.0,
        }
    }
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("attack lambda {} must be >= 0", self.lambda)));
        }
        if !(self.lambda_adversarial >= 0.0 && self.lambda_adversarial.is_finite()) {
            return Err(Error::config("lambda_adversarial must be >= 0"));
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.initial_lr && self.initial_lr.is_finite()) {
            return Err(Error::config("attack learning rates need 0 < min_lr <= initial_lr"));
        }
        Ok(())
    }
}

pub fn write_attack(w: &mut KvWriter, a: &AttackSpec) {
    w.put_f64("attack.lambda", a.lambda)
        .put_f64("attack.initial_lr", a.initial_lr)
        .put_f64("attack.min_lr", a.min_lr)
        .put("attack.iterations", a.iterations)
        .put("attack.variant", a.variant)
        .put_f64("attack.lambda_adversarial", a.lambda_adversarial);
}

pub fn read_attack(r: &mut KvReader) -> Result<AttackSpec> {
    let d = AttackSpec::default();
    let a = AttackSpec {
        lambda: r.take_or("attack.lambda", d.lambda)?,
        initial_lr: r.take_or("attack.initial_lr", d.initial_lr)?,
        min_lr: r.take_or("attack.min_lr", d.min_lr)?,
        iterations: r.take_or("attack.iterations", d.iterations)?,
        variant: r.take_or("attack.variant", d.variant)?,
        lambda_adversarial: r.take_or("attack.lambda_adversarial", d.lambda_adversarial)?,
    };
    a.validate()?;
    Ok(a)
}

/// Grids for the sweep experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub radii: Vec<usize>,
    pub sigmas: Vec<f64>,
    /// Poisson photon counts for the noise sweep.
    pub photons: Vec<f64>,
    pub lambda_adversarial: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            radii: vec![2, 4, 8, 16],
            sigmas: vec![0.0, 0.02, 0.05, 0.1, 0.2, 0.4],
            photons: vec![4000.0, 1000.0, 250.0],
            lambda_adversarial: vec![0.0, 0.25, 0.5, 1.0, 2.0],
        }
    }
}

/// Complete experiment definition read from a config file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub variant: Variant,
    pub seed: u64,
    pub phantom: PhantomSpec,
    pub noise: Option<NoiseSpec>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub attack: AttackSpec,
    pub sweep: SweepConfig,
    /// Dataset directory.
    pub data_dir: PathBuf,
    /// Directory for checkpoints, predictions and CSVs.
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Defaults for `task`: wdsr-mini, withGF, 64x64 phantoms.
    pub fn defaults(task: Task) -> Self {
        Self {
            task,
            variant: Variant::WithGf,
            seed: 0,
            phantom: PhantomSpec::default(),
            noise: None,
            n_train: 16,
            n_val: 4,
            n_test: 8,
            generator: GeneratorConfig::wdsr_mini(task),
            train: TrainConfig::default(),
            attack: AttackSpec::default(),
            sweep: SweepConfig::default(),
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
        }
    }

    /// Parses config text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut r = KvReader::parse(text)?;
        let task = r.take_with("task", Task::parse)?.unwrap_or(Task::SuperResolution);
        let d = Self::defaults(task);
        let variant = r.take_or("variant", d.variant)?;
        let seed = r.take_or("seed", d.seed)?;
        let mut phantom = read_phantom(&mut r)?;
        if !text.lines().any(|l| l.trim_start().starts_with("phantom.seed")) {
            phantom.seed = seed;
        }
        let noise_seed = r.take_or("noise.seed", seed)?;
        let noise = r
            .take_with("noise", parse_noise_kind)?
            .flatten()
            .map(|kind| NoiseSpec { kind, seed: noise_seed });
        if let Some(n) = &noise {
            n.validate()?;
        }
        let n_train = r.take_or("data.n_train", d.n_train)?;
        let n_val = r.take_or("data.n_val", d.n_val)?;
        let n_test = r.take_or("data.n_test", d.n_test)?;
        if n_train == 0 || n_val == 0 || n_test == 0 {
            return Err(Error::config("data.n_train, data.n_val and data.n_test must be positive"));
        }
        let mut generator = read_generator(&mut r, task)?;
        if generator.task != task {
            return Err(Error::config("generator.task differs from task"));
        }
        if !text.lines().any(|l| l.trim_start().starts_with("generator.seed")) {
            generator.seed = seed;
        }
        let has_train_variant = r.has_prefix("train.variant");
        let has_train_seed = r.has_prefix("train.seed");
        let mut train = read_train(&mut r)?;
        if !has_train_variant && variant != Variant::OnlyGf {
            train.variant = variant;
        }
        if !has_train_seed {
            train.seed = seed;
        }
        let attack = read_attack(&mut r)?;
        let ds = SweepConfig::default();
        let sweep = SweepConfig {
            radii: r.take_with("sweep.radii", parse_list)?.unwrap_or(ds.radii),
            sigmas: r.take_with("sweep.sigmas", parse_list)?.unwrap_or(ds.sigmas),
            photons: r.take_with("sweep.photons", parse_list)?.unwrap_or(ds.photons),
            lambda_adversarial: r
                .take_with("sweep.lambda_adversarial", parse_list)?
                .unwrap_or(ds.lambda_adversarial),
        };
        if sweep.sigmas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config("sweep.sigmas must be ascending"));
        }
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let data_dir = resolve(r.take_or("paths.data", d.data_dir)?);
        let out_dir = resolve(r.take_or("paths.out", d.out_dir)?);
        r.finish()?;
        Ok(Self {
            task,
            variant,
            seed,
            phantom,
            noise,
            n_train,
            n_val,
            n_test,
            generator,
            train,
            attack,
            sweep,
            data_dir,
            out_dir,
        })
    }

    /// Reads a config file; paths inside are relative to its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Canonical text; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let mut w = KvWriter::new();
        w.put("task", self.task.as_str())
            .put("variant", self.variant)
            .put("seed", self.seed);
        write_phantom(&mut w, &self.phantom);
        w.put("noise", noise_kind_str(self.noise.as_ref()));
        if let Some(n) = &self.noise {
            w.put("noise.seed", n.seed);
        }
        w.put("data.n_train", self.n_train)
            .put("data.n_val", self.n_val)
            .put("data.n_test", self.n_test);
        write_generator(&mut w, &self.generator);
        write_train(&mut w, &self.train);
        write_attack(&mut w, &self.attack);
        w.put("sweep.radii", fmt_list(&self.sweep.radii))
            .put("sweep.sigmas", fmt_f64_list(&self.sweep.sigmas))
            .put("sweep.photons", fmt_f64_list(&self.sweep.photons))
            .put("sweep.lambda_adversarial", fmt_f64_list(&self.sweep.lambda_adversarial))
            .put("paths.data", self.data_dir.display())
            .put("paths.out", self.out_dir.display());
        w.finish()
    }
}
