//! Generator training: losses, Adam with plateau decay, checkpoints.
//!
//! Only the generator's weights are trained. For the `withGF` variant the
//! guided filter sits between the generator and the loss with fixed radius
//! and regularizer.

mod adam;
mod checkpoint;
mod loss;

pub use adam::{adam_step, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, LR_RANGE};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{loss, loss_value, LossSpec};

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::guided::GuidedFilterParams;
use crate::image::ImagePair;
use crate::net::{build_generator, GeneratorConfig, Network};
use crate::pipeline::{build_pipeline, forward_pipeline, Model, Variant};

/// Loss above which a run counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub min_lr: f64,
    /// Validation evaluations without improvement before the rate decays.
    pub patience: usize,
    pub decay: f64,
    /// Relative improvement a validation loss needs to count as progress.
    pub threshold: f64,
    pub max_iterations: usize,
    /// Iterations between validation evaluations.
    pub val_every: usize,
    pub seed: u64,
    pub loss: LossSpec,
    pub variant: Variant,
    pub gf: GuidedFilterParams,
    /// Restrict the loss to the pair's mask.
    pub masked_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-5,
            min_lr: 1e-6,
            patience: 5,
            decay: 0.5,
            threshold: 1e-4,
            max_iterations: 1000,
            val_every: 50,
            seed: 0,
            loss: LossSpec::default(),
            variant: Variant::WithGf,
            gf: GuidedFilterParams::default(),
            masked_loss: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = LR_RANGE;
        for (name, v) in [("initial_lr", self.initial_lr), ("min_lr", self.min_lr)] {
            if !(lo..=hi).contains(&v) {
                return Err(Error::config(format!("{name} {v} outside [{lo}, {hi}]")));
            }
        }
        if self.min_lr > self.initial_lr {
            return Err(Error::config("min_lr must not exceed initial_lr"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::config(format!("decay {} must lie in (0, 1)", self.decay)));
        }
        if !(self.threshold >= 0.0 && self.threshold < 1.0) {
            return Err(Error::config(format!("threshold {} must lie in [0, 1)", self.threshold)));
        }
        if self.val_every == 0 {
            return Err(Error::config("val_every must be at least 1"));
        }
        if self.variant == Variant::OnlyGf {
            return Err(Error::config("onlyGF has no trainable parameters"));
        }
        self.loss.validate()?;
        self.gf.validate()
    }
}

/// One validation evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    /// Learning rate in effect after this evaluation.
    pub lr: f64,
    /// Mean training loss since the previous evaluation; NaN when no step ran.
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Trained generator plus everything needed to reproduce or resume it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    /// Generator holding the best-validation parameters.
    pub network: Network,
    /// Optimizer state after the last iteration.
    pub optimizer: OptimizerState,
    pub train: TrainConfig,
    pub history: Vec<HistoryEntry>,
    pub iterations_run: usize,
    pub best_iteration: usize,
    pub best_val_loss: f64,
}

impl Checkpoint {
    pub fn variant(&self) -> Variant {
        self.train.variant
    }

    pub fn gf(&self) -> &GuidedFilterParams {
        &self.train.gf
    }

    /// The trained variant ready for inference.
    pub fn model(&self) -> Model {
        Model {
            variant: self.train.variant,
            network: Some(self.network.clone()),
            gf: self.train.gf,
        }
    }

    /// Validation loss of the last evaluation.
    pub fn final_val_loss(&self) -> Option<f64> {
        self.history.last().map(|h| h.val_loss)
    }
}

fn loss_mask<'a>(pair: &'a ImagePair, cfg: &TrainConfig) -> Option<&'a crate::image::Mask> {
    cfg.masked_loss.then_some(&pair.mask)
}

/// Loss of one pair with fixed weights.
pub fn pair_loss(net: &Network, pair: &ImagePair, cfg: &TrainConfig) -> Result<f64> {
    let pred = forward_pipeline(Some(net), pair, cfg.variant, &cfg.gf)?;
    let target = Tensor::from_image(&pair.ground_truth);
    loss_value(&pred, &target, &cfg.loss, loss_mask(pair, cfg))
}

/// Mean loss over `set`, evaluated in parallel and summed in order.
pub fn validation_loss(net: &Network, set: &[ImagePair], cfg: &TrainConfig) -> Result<f64> {
    let losses: Vec<f64> = set
        .par_iter()
        .map(|p| pair_loss(net, p, cfg))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// One forward/backward pass; returns the loss and parameter gradients.
pub fn loss_and_gradients(net: &Network, pair: &ImagePair, cfg: &TrainConfig) -> Result<(f64, Vec<Tensor<f64>>)> {
    let mut g = Graph::new();
    let params = net.bind(&mut g);
    let input = g.constant(Tensor::from_image(&pair.input));
    let guide = g.constant(Tensor::from_image(&pair.guide));
    let target = g.constant(Tensor::from_image(&pair.ground_truth));
    let vars = build_pipeline(&mut g, Some((net, &params)), input, guide, pair.meta.task, cfg.variant, &cfg.gf)?;
    let l = loss(&mut g, vars.output, target, &cfg.loss, loss_mask(pair, cfg))?;
    let value = g.value(l).item();
    if !value.is_finite() || value > DIVERGENCE_LIMIT {
        return Err(Error::numerical(format!("loss diverged: {value}")));
    }
    let grads = g.backward(l)?;
    let out = params
        .iter()
        .zip(net.params())
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();
    Ok((value, out))
}

fn check_sets(train_set: &[ImagePair], val_set: &[ImagePair], net: &Network) -> Result<()> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::config("training and validation sets must be non-empty"));
    }
    let task = net.config().task;
    for p in train_set.iter().chain(val_set) {
        p.validate()?;
        if p.meta.task != task {
            return Err(Error::config(format!(
                "pair for {} in a {} training run",
                p.meta.task.as_str(),
                task.as_str()
            )));
        }
    }
    let train_seeds: HashSet<u64> = train_set.iter().map(|p| p.meta.seed).collect();
    if val_set.iter().any(|p| train_seeds.contains(&p.meta.seed)) {
        return Err(Error::config("validation set shares phantoms with the training set"));
    }
    Ok(())
}

/// Trains a fresh generator built from `generator`.
pub fn train(
    generator: &GeneratorConfig,
    train_set: &[ImagePair],
    val_set: &[ImagePair],
    cfg: &TrainConfig,
) -> Result<Checkpoint> {
    train_observed(build_generator(generator)?, train_set, val_set, cfg, |_| {})
}

/// Trains `net` in place of a fresh generator, calling `observe` after every
/// validation evaluation.
pub fn train_observed(
    mut net: Network,
    train_set: &[ImagePair],
    val_set: &[ImagePair],
    cfg: &TrainConfig,
    mut observe: impl FnMut(&HistoryEntry),
) -> Result<Checkpoint> {
    cfg.validate()?;
    check_sets(train_set, val_set, &net)?;

    let mut opt = OptimizerState::new(net.params(), cfg.initial_lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut history = Vec::new();

    let mut best_val = validation_loss(&net, val_set, cfg)?;
    let mut best_params = net.params().to_vec();
    let mut best_iteration = 0;
    let mut plateau_ref = best_val;
    let mut wait = 0;
    let first = HistoryEntry {
        iteration: 0,
        lr: opt.lr,
        train_loss: f64::NAN,
        val_loss: best_val,
    };
    observe(&first);
    history.push(first);

    let (mut window_sum, mut window_n) = (0.0, 0usize);
    for it in 1..=cfg.max_iterations {
        if order.is_empty() {
            order = (0..train_set.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let idx = order.pop().expect("refilled above");
        let (value, grads) = loss_and_gradients(&net, &train_set[idx], cfg)
            .map_err(|e| annotate(e, it))?;
        adam_step(net.params_mut(), &grads, &mut opt).map_err(|e| annotate(e, it))?;
        window_sum += value;
        window_n += 1;

        if it % cfg.val_every == 0 || it == cfg.max_iterations {
            let val = validation_loss(&net, val_set, cfg).map_err(|e| annotate(e, it))?;
            if !val.is_finite() || val > DIVERGENCE_LIMIT {
                return Err(Error::numerical(format!(
                    "validation loss diverged at iteration {it}: {val}"
                )));
            }
            if val < best_val {
                best_val = val;
                best_params = net.params().to_vec();
                best_iteration = it;
            }
            if val < plateau_ref * (1.0 - cfg.threshold) {
                plateau_ref = val;
                wait = 0;
            } else {
                wait += 1;
                if wait >= cfg.patience {
                    opt.set_lr((opt.lr * cfg.decay).max(cfg.min_lr))?;
                    wait = 0;
                }
            }
            let entry = HistoryEntry {
                iteration: it,
                lr: opt.lr,
                train_loss: window_sum / window_n as f64,
                val_loss: val,
            };
            observe(&entry);
            history.push(entry);
            window_sum = 0.0;
            window_n = 0;
        }
    }

    net.set_params(best_params)?;
    Ok(Checkpoint {
        network: net,
        optimizer: opt,
        train: cfg.clone(),
        history,
        iterations_run: cfg.max_iterations,
        best_iteration,
        best_val_loss: best_val,
    })
}

fn annotate(e: Error, iteration: usize) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("iteration {iteration}: {m}")),
        other => other,
    }
}
