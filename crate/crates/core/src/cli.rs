//! Command-line front end behind the `dgf` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::dataset::{generate, load_dataset, write_dataset, Dataset, Split, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::experiments::{
    ablation_run, apply_attack, attack_curve, content_preservation_sweep, evaluate, noise_level_rows,
    robustness_sweep, train_attack, SweepResult,
};
use crate::degrade::NoiseSpec;
use crate::guided::GuidedFilterParams;
use crate::image::{Image2D, Task};
use crate::io::{read_image, write_image};
use crate::metrics::{pearson_masked, validate_metric_csv};
use crate::pipeline::{guidance_map, upsampled_input, Model, Variant};
use crate::train::{load_checkpoint, save_checkpoint, train, Checkpoint};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "DGF_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dgf", version, about = "Deep guided filtering on synthetic multi-modal phantoms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/val/test phantom pairs and a manifest.
    Gen(GenArgs),
    /// Train a generator for the configured variant.
    Train(TrainArgs),
    /// Run one variant on an input/guide pair.
    Infer(InferArgs),
    /// Evaluate checkpoints on the test split and write a metrics CSV.
    Eval(EvalArgs),
    /// Radius, noise-level or guide-robustness sweeps.
    Sweep(SweepArgs),
    /// Train adversarial residuals against a checkpoint.
    Attack(AttackArgs),
    /// Dump guidance maps with one modality shut out.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Run configuration file (`key = value` lines).
    #[arg(long, short)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Output directory; defaults to `paths.data`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Overrides the configured variant.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Overrides `train.max_iterations`.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Checkpoint path; defaults to `<paths.out>/<variant>.dgfc`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint file, or `none` for onlyGF.
    #[arg(long)]
    pub checkpoint: String,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub guide: PathBuf,
    /// Task when running without a checkpoint.
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Guided filter radius (onlyGF, or override for withGF).
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Output image (`.pgm` for 16-bit PGM, anything else DGF1).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskArg {
    Sr,
    Denoising,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Sr => Task::SuperResolution,
            TaskArg::Denoising => Task::Denoising,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Checkpoints to evaluate; a withGF plus a withoutGF checkpoint give the
    /// full ablation table.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Metrics CSV; defaults to `<paths.out>/metrics.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(value_enum)]
    pub kind: SweepKind,
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub with_gf: PathBuf,
    #[arg(long)]
    pub without_gf: PathBuf,
    /// Sweep CSV; defaults to `<paths.out>/sweep_<kind>.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Radius,
    Noise,
    Robustness,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Index into the test split.
    #[arg(long, default_value_t = 0)]
    pub pair: usize,
    /// Output directory; defaults to `<paths.out>/attack_<variant>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub pair: usize,
    /// Output directory; defaults to `<paths.out>/inspect`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Builds the global thread pool, capped by `DGF_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Infer(a) => cmd_infer(&a),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(&a).map(|_| ()),
        Command::Attack(a) => cmd_attack(&a),
        Command::Inspect(a) => cmd_inspect(&a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads the configured dataset; it must have been written by `gen`.
fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    if !cfg.data_dir.join(MANIFEST_FILE).exists() {
        return Err(Error::config(format!(
            "no dataset in {}; run `dgf gen` first",
            cfg.data_dir.display()
        )));
    }
    let ds = load_dataset(&cfg.data_dir)?;
    if let Some(s) = ds.samples.iter().find(|s| s.pair.meta.task != cfg.task) {
        return Err(Error::config(format!("dataset sample {} is not a {} pair", s.id, cfg.task.as_str())));
    }
    Ok(ds)
}

fn model_of(cp: &Checkpoint, task: Task) -> Result<Model> {
    if cp.network.config().task != task {
        return Err(Error::config(format!(
            "checkpoint was trained for {}, config is {}",
            cp.network.config().task.as_str(),
            task.as_str()
        )));
    }
    Ok(cp.model())
}

fn load_model(path: &Path, task: Task, expect: Option<Variant>) -> Result<Model> {
    let m = model_of(&load_checkpoint(path)?, task)?;
    if let Some(v) = expect {
        if m.variant != v {
            return Err(Error::config(format!("{} holds a {} model, expected {v}", path.display(), m.variant)));
        }
    }
    Ok(m)
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config.config)?;
    let dir = a.out.clone().unwrap_or_else(|| cfg.data_dir.clone());
    write_dataset(&generate(&cfg)?, &dir)?;
    write_text(&dir.join("config.txt"), &cfg.to_text())
}

/// Trains and saves a checkpoint; returns its path.
pub fn cmd_train(a: &TrainArgs) -> Result<PathBuf> {
    let cfg = RunConfig::load(&a.config.config)?;
    let mut tc = cfg.train.clone();
    if let Some(v) = a.variant {
        tc.variant = v;
    }
    if let Some(n) = a.iterations {
        tc.max_iterations = n;
    }
    let ds = dataset(&cfg)?;
    let cp = train(&cfg.generator, &ds.split(Split::Train), &ds.split(Split::Val), &tc)?;
    let path = a
        .out
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(format!("{}.dgfc", tc.variant)));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    save_checkpoint(&cp, &path)?;
    let mut hist = String::from("iteration,lr,train_loss,val_loss\n");
    for h in &cp.history {
        hist.push_str(&format!(
            "{},{},{},{}\n",
            h.iteration,
            crate::metrics::format_sig9(h.lr),
            crate::metrics::format_sig9(h.train_loss),
            crate::metrics::format_sig9(h.val_loss)
        ));
    }
    write_text(&path.with_extension("history.csv"), &hist)?;
    Ok(path)
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let input = read_image(&a.input)?;
    let guide = read_image(&a.guide)?;
    let gf_override = |base: GuidedFilterParams| {
        GuidedFilterParams::new(a.radius.unwrap_or(base.radius()), a.epsilon.unwrap_or(base.epsilon))
    };
    let (model, task) = if a.checkpoint == "none" {
        let task: Task = a
            .task
            .ok_or_else(|| Error::config("--task is required without a checkpoint"))?
            .into();
        (Model::only_gf(gf_override(GuidedFilterParams::default())), task)
    } else {
        let cp = load_checkpoint(&a.checkpoint)?;
        let task = cp.network.config().task;
        if let Some(t) = a.task {
            if Task::from(t) != task {
                return Err(Error::config("--task disagrees with the checkpoint"));
            }
        }
        let m = cp.model();
        let gf = gf_override(m.gf);
        (m.with_gf(gf), task)
    };
    model.gf.validate()?;
    let pred = model.predict_images(&input, &guide, task)?;
    write_image(&pred, &a.out)
}

/// Writes the metrics CSV and returns its path.
pub fn cmd_eval(a: &EvalArgs) -> Result<PathBuf> {
    let cfg = RunConfig::load(&a.config.config)?;
    let split = Split::parse(&a.split)?;
    let ds = dataset(&cfg)?;
    let (pairs, ids) = (ds.split(split), ds.ids(split));
    let models = a
        .checkpoints
        .iter()
        .map(|p| load_model(p, cfg.task, None))
        .collect::<Result<Vec<_>>>()?;
    let only = Model::only_gf(cfg.train.gf);
    let find = |v: Variant| models.iter().find(|m| m.variant == v);
    let report = match (find(Variant::WithGf), find(Variant::WithoutGf)) {
        (Some(w), Some(wo)) if models.len() == 2 => ablation_run(&pairs, &ids, Some(w), Some(wo), &only)?,
        _ => {
            let mut all: Vec<&Model> = models.iter().collect();
            all.push(&only);
            evaluate(&all, &pairs, &ids)?
        }
    };
    let csv = report.to_csv();
    validate_metric_csv(&csv)?;
    let path = a.out.clone().unwrap_or_else(|| cfg.out_dir.join("metrics.csv"));
    write_text(&path, &csv)?;
    Ok(path)
}

/// Writes the sweep CSV and returns its path.
pub fn cmd_sweep(a: &SweepArgs) -> Result<PathBuf> {
    let cfg = RunConfig::load(&a.config.config)?;
    let with_gf = load_model(&a.with_gf, cfg.task, Some(Variant::WithGf))?;
    let without_gf = load_model(&a.without_gf, cfg.task, Some(Variant::WithoutGf))?;
    let only = Model::only_gf(with_gf.gf);
    let (result, name) = match a.kind {
        SweepKind::Radius => {
            let per: Vec<(usize, Model)> = cfg
                .sweep
                .radii
                .iter()
                .map(|&r| (r, with_gf.with_gf(GuidedFilterParams::new(r, with_gf.gf.epsilon))))
                .collect();
            let test = dataset(&cfg)?.split(Split::Test);
            (content_preservation_sweep(&per, &without_gf, &test)?, "radius")
        }
        SweepKind::Robustness => {
            let test = dataset(&cfg)?.split(Split::Test);
            let r = robustness_sweep(&[&with_gf, &without_gf, &only], &test, &cfg.sweep.sigmas, cfg.seed)?;
            (r, "robustness")
        }
        SweepKind::Noise => {
            if cfg.task != Task::Denoising {
                return Err(Error::config("the noise sweep applies to the denoising task"));
            }
            let mut out = SweepResult::default();
            for &photons in &cfg.sweep.photons {
                let mut level = cfg.clone();
                level.noise = Some(NoiseSpec::poisson(photons, cfg.noise.map_or(cfg.seed, |n| n.seed)));
                let test = generate(&level)?.split(Split::Test);
                noise_level_rows(&[&with_gf, &without_gf, &only], &test, photons, &mut out)?;
            }
            (out, "noise")
        }
    };
    let path = a
        .out
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(format!("sweep_{name}.csv")));
    write_text(&path, &result.to_csv())?;
    Ok(path)
}

fn test_pair(cfg: &RunConfig, index: usize) -> Result<crate::image::ImagePair> {
    let test = dataset(cfg)?.split(Split::Test);
    let n = test.len();
    test.into_iter()
        .nth(index)
        .ok_or_else(|| Error::config(format!("pair index {index} out of range ({n} test pairs)")))
}

pub fn cmd_attack(a: &AttackArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config.config)?;
    let model = load_model(&a.checkpoint, cfg.task, None)?;
    let pair = test_pair(&cfg, a.pair)?;
    let spec = crate::config::AttackSpec {
        variant: model.variant,
        ..cfg.attack.clone()
    };
    let result = train_attack(&model, &pair, &spec)?;
    let dir = a
        .out
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(format!("attack_{}", model.variant)));
    ensure_dir(&dir)?;
    write_image(&result.e_input, dir.join("e_input.dgf"))?;
    write_image(&result.e_guide, dir.join("e_guide.dgf"))?;
    write_text(&dir.join("trace.csv"), &result.trace_csv())?;
    let curve = attack_curve(&model, &pair, &result, &cfg.sweep.lambda_adversarial)?;
    write_text(&dir.join("curve.csv"), &curve.to_csv())?;
    let (attacked, _) = apply_attack(&model, &pair, &result, spec.lambda_adversarial)?;
    write_image(&attacked, dir.join("attacked.dgf"))
}

pub fn cmd_inspect(a: &InspectArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config.config)?;
    let cp = load_checkpoint(&a.checkpoint)?;
    if cp.variant() != Variant::WithGf {
        return Err(Error::config(format!(
            "inspect needs a withGF checkpoint, got {}",
            cp.variant()
        )));
    }
    let model = model_of(&cp, cfg.task)?;
    let net = model.network.as_ref().expect("withGF carries a network");
    let pair = test_pair(&cfg, a.pair)?;
    let dir = a.out.clone().unwrap_or_else(|| cfg.out_dir.join("inspect"));
    ensure_dir(&dir)?;
    let maps = inspect_maps(net, &pair)?;
    let up = upsampled_input(&pair)?;
    let mut sweep = SweepResult::default();
    for (name, m) in [("full", &maps[0]), ("no_guide", &maps[1]), ("no_input", &maps[2])] {
        write_image(m, dir.join(format!("guidance_{name}.dgf")))?;
        sweep.push("inspect", name, "withGF", "pearson_input_up", pearson_masked(m, &up, &pair.mask)?);
        sweep.push("inspect", name, "withGF", "pearson_guide", pearson_masked(m, &pair.guide, &pair.mask)?);
    }
    write_text(&dir.join("correlation.csv"), &sweep.to_csv())
}

/// Guidance maps `phi(I, G)`, `phi(I, 0)` and `phi(0, G)`.
pub fn inspect_maps(net: &crate::net::Network, pair: &crate::image::ImagePair) -> Result<[Image2D; 3]> {
    let zero_in = Image2D::zeros(pair.input.width(), pair.input.height());
    let zero_guide = Image2D::zeros(pair.guide.width(), pair.guide.height());
    Ok([
        guidance_map(net, &pair.input, &pair.guide)?,
        guidance_map(net, &pair.input, &zero_guide)?,
        guidance_map(net, &zero_in, &pair.guide)?,
    ])
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            e.exit_code()
        }
    }
}
