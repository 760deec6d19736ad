//! Comprehensibility experiments: content preservation, guide robustness,
//! adversarial residuals and the variant ablation.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::autodiff::{Graph, Tensor};
use crate::config::AttackSpec;
use crate::degrade::{apply_noise, NoiseSpec};
use crate::error::{Error, Result};
use crate::image::{Image2D, ImagePair, Task};
use crate::metrics::{format_sig9, lowfreq_ssim, mae_masked, ssim_masked, MetricReport, MetricRow};
use crate::phantom::derive_seed;
use crate::pipeline::{build_pipeline, upsampled_input, Model, Variant};
use crate::train::{adam_step, loss, LossSpec, OptimizerState};

pub const SWEEP_CSV_HEADER: &str = "sweep_kind,param,variant,metric,value";
pub const ATTACK_CSV_HEADER: &str = "iteration,objective,deviation,res_norm";

/// One aggregated cell of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub sweep_kind: String,
    /// Swept value as written to the CSV (`ref` for reference rows).
    pub param: String,
    pub variant: String,
    pub metric: String,
    /// Mean over the test set.
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn push(&mut self, kind: &str, param: impl Into<String>, variant: &str, metric: &str, value: f64) {
        self.rows.push(SweepRow {
            sweep_kind: kind.to_string(),
            param: param.into(),
            variant: variant.to_string(),
            metric: metric.to_string(),
            value,
        });
    }

    /// Value of the first row matching `param`, `variant` and `metric`.
    pub fn get(&self, param: &str, variant: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.param == param && r.variant == variant && r.metric == metric)
            .map(|r| r.value)
    }

    /// Values for `variant`/`metric` in row order.
    pub fn series(&self, variant: &str, metric: &str) -> Vec<(String, f64)> {
        self.rows
            .iter()
            .filter(|r| r.variant == variant && r.metric == metric)
            .map(|r| (r.param.clone(), r.value))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.sweep_kind,
                r.param,
                r.variant,
                r.metric,
                format_sig9(r.value)
            )
            .unwrap();
        }
        out
    }
}

/// Sweep parameter as CSV text.
pub fn param_str(v: f64) -> String {
    format_sig9(v)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Reference for the low-frequency audit: the upsampled input for
/// super-resolution, the label for denoising.
pub fn lowfreq_reference(pair: &ImagePair) -> Result<Image2D> {
    match pair.meta.task {
        Task::SuperResolution => upsampled_input(pair),
        Task::Denoising => Ok(pair.ground_truth.clone()),
    }
}

fn check_set(set: &[ImagePair]) -> Result<()> {
    if set.is_empty() {
        return Err(Error::config("test set is empty"));
    }
    set.iter().try_for_each(ImagePair::validate)
}

/// Masked SSIM and MAE of every model under increasing Gaussian noise on
/// the guide only. Noise for pair `k` is seeded from `seed` and `k`, so all
/// models see the same corruption.
pub fn robustness_sweep(models: &[&Model], test_set: &[ImagePair], sigmas: &[f64], seed: u64) -> Result<SweepResult> {
    check_set(test_set)?;
    if sigmas.is_empty() || sigmas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config("sigmas must be non-empty and ascending"));
    }
    let mut out = SweepResult::default();
    for &sigma in sigmas {
        let guides: Vec<Image2D> = test_set
            .par_iter()
            .enumerate()
            .map(|(k, p)| apply_noise(&p.guide, &NoiseSpec::gaussian(sigma, derive_seed(seed, k as u64))))
            .collect::<Result<_>>()?;
        for m in models {
            let scores: Vec<(f64, f64)> = test_set
                .par_iter()
                .zip(&guides)
                .map(|(p, g)| {
                    let pred = m.predict_images(&p.input, g, p.meta.task)?;
                    Ok((
                        ssim_masked(&pred, &p.ground_truth, &p.mask)?,
                        mae_masked(&pred, &p.ground_truth, &p.mask)?,
                    ))
                })
                .collect::<Result<_>>()?;
            let ssim: Vec<f64> = scores.iter().map(|s| s.0).collect();
            let mae: Vec<f64> = scores.iter().map(|s| s.1).collect();
            let v = m.variant.as_str();
            out.push("robustness", param_str(sigma), v, "ssim", mean(&ssim));
            out.push("robustness", param_str(sigma), v, "mae", mean(&mae));
        }
    }
    Ok(out)
}

/// Low-frequency SSIM against [`lowfreq_reference`] for the withGF model at
/// each radius, followed by one `ref` row for the withoutGF model.
///
/// `with_gf` pairs each radius with the model evaluated there; a single
/// network can be reused across radii through [`Model::with_gf`].
pub fn content_preservation_sweep(
    with_gf: &[(usize, Model)],
    without_gf: &Model,
    test_set: &[ImagePair],
) -> Result<SweepResult> {
    check_set(test_set)?;
    if without_gf.variant != Variant::WithoutGf {
        return Err(Error::config("reference model must be withoutGF"));
    }
    let refs: Vec<Image2D> = test_set.par_iter().map(lowfreq_reference).collect::<Result<_>>()?;
    let score = |m: &Model| -> Result<f64> {
        let v: Vec<f64> = test_set
            .par_iter()
            .zip(&refs)
            .map(|(p, r)| lowfreq_ssim(&m.predict(p)?, r, &p.mask))
            .collect::<Result<_>>()?;
        Ok(mean(&v))
    };
    let mut out = SweepResult::default();
    for (radius, m) in with_gf {
        if m.variant != Variant::WithGf {
            return Err(Error::config("content sweep models must be withGF"));
        }
        if m.gf.radius() != *radius {
            return Err(Error::config(format!(
                "model listed for radius {radius} filters with radius {}",
                m.gf.radius()
            )));
        }
        out.push("radius", radius.to_string(), "withGF", "lowfreq_ssim", score(m)?);
    }
    out.push("radius", "ref", "withoutGF", "lowfreq_ssim", score(without_gf)?);
    Ok(out)
}

/// Masked MAE/SSIM of each pair under a Poisson level for each model.
/// Models are applied to the pairs as given; `photons` only labels the rows.
pub fn noise_level_rows(models: &[&Model], test_set: &[ImagePair], photons: f64, out: &mut SweepResult) -> Result<()> {
    check_set(test_set)?;
    for m in models {
        let scores: Vec<(f64, f64)> = test_set
            .par_iter()
            .map(|p| {
                let pred = m.predict(p)?;
                Ok((
                    ssim_masked(&pred, &p.ground_truth, &p.mask)?,
                    mae_masked(&pred, &p.ground_truth, &p.mask)?,
                ))
            })
            .collect::<Result<_>>()?;
        let v = m.variant.as_str();
        out.push("noise", param_str(photons), v, "ssim", mean(&scores.iter().map(|s| s.0).collect::<Vec<_>>()));
        out.push("noise", param_str(photons), v, "mae", mean(&scores.iter().map(|s| s.1).collect::<Vec<_>>()));
    }
    Ok(())
}

/// Interpolation baseline name for a task.
pub fn baseline_name(task: Task) -> &'static str {
    match task {
        Task::SuperResolution => "bilinear",
        Task::Denoising => "identity",
    }
}

fn metric_row(id: &str, variant: &str, pair: &ImagePair, pred: &Image2D, reference: &Image2D) -> Result<MetricRow> {
    Ok(MetricRow {
        id: id.to_string(),
        variant: variant.to_string(),
        task: pair.meta.task.as_str().to_string(),
        mae: mae_masked(pred, &pair.ground_truth, &pair.mask)?,
        ssim: ssim_masked(pred, &pair.ground_truth, &pair.mask)?,
        lowfreq_ssim: lowfreq_ssim(pred, reference, &pair.mask)?,
    })
}

/// Evaluates the interpolation baseline, onlyGF and the two learned variants
/// on every pair. Rows are ordered by pair, then baseline, onlyGF, withGF,
/// withoutGF.
pub fn ablation_run(
    test_set: &[ImagePair],
    ids: &[String],
    with_gf: Option<&Model>,
    without_gf: Option<&Model>,
    only_gf: &Model,
) -> Result<MetricReport> {
    check_set(test_set)?;
    if ids.len() != test_set.len() {
        return Err(Error::contract("one id per test pair required"));
    }
    let with_gf = with_gf.ok_or_else(|| Error::config("ablation needs a withGF checkpoint"))?;
    let without_gf = without_gf.ok_or_else(|| Error::config("ablation needs a withoutGF checkpoint"))?;
    for (m, v) in [(with_gf, Variant::WithGf), (without_gf, Variant::WithoutGf), (only_gf, Variant::OnlyGf)] {
        if m.variant != v {
            return Err(Error::config(format!("expected a {v} model, got {}", m.variant)));
        }
    }
    let rows: Vec<Vec<MetricRow>> = test_set
        .par_iter()
        .zip(ids)
        .map(|(p, id)| {
            let reference = lowfreq_reference(p)?;
            let base = upsampled_input(p)?;
            let mut rows = vec![metric_row(id, baseline_name(p.meta.task), p, &base, &reference)?];
            for m in [only_gf, with_gf, without_gf] {
                rows.push(metric_row(id, m.variant.as_str(), p, &m.predict(p)?, &reference)?);
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut report = MetricReport::default();
    rows.into_iter().flatten().for_each(|r| report.push(r));
    Ok(report)
}

/// Evaluates a set of models (any variants) on every pair.
pub fn evaluate(models: &[&Model], test_set: &[ImagePair], ids: &[String]) -> Result<MetricReport> {
    check_set(test_set)?;
    if ids.len() != test_set.len() {
        return Err(Error::contract("one id per test pair required"));
    }
    let rows: Vec<Vec<MetricRow>> = test_set
        .par_iter()
        .zip(ids)
        .map(|(p, id)| {
            let reference = lowfreq_reference(p)?;
            models
                .iter()
                .map(|m| metric_row(id, m.variant.as_str(), p, &m.predict(p)?, &reference))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut report = MetricReport::default();
    rows.into_iter().flatten().for_each(|r| report.push(r));
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackTraceRow {
    pub iteration: usize,
    /// Deviation minus the weighted residual norm; the quantity maximized.
    pub objective: f64,
    /// L1 distance to the label summed over the mask.
    pub deviation: f64,
    /// `|E_I|_2 + |E_G|_2`.
    pub res_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    pub e_input: Image2D,
    pub e_guide: Image2D,
    /// One row per iteration before its update, plus one after the last.
    pub trace: Vec<AttackTraceRow>,
}

impl AttackResult {
    pub fn final_row(&self) -> AttackTraceRow {
        *self.trace.last().expect("trace always has a final row")
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from(ATTACK_CSV_HEADER);
        out.push('\n');
        for r in &self.trace {
            writeln!(
                out,
                "{},{},{},{}",
                r.iteration,
                format_sig9(r.objective),
                format_sig9(r.deviation),
                format_sig9(r.res_norm)
            )
            .unwrap();
        }
        out
    }
}

/// Log-linear decay from `spec.initial_lr` at the first iteration to
/// `spec.min_lr` at the last.
pub fn attack_lr(spec: &AttackSpec, iteration: usize) -> f64 {
    if spec.iterations <= 1 {
        return spec.initial_lr;
    }
    let t = iteration as f64 / (spec.iterations - 1) as f64;
    spec.initial_lr * (spec.min_lr / spec.initial_lr).powf(t)
}

/// Trains additive residuals on the input and guide that push the frozen
/// model's prediction away from the label while keeping their L2 norms
/// small: maximize `sum_mask|L - P| - lambda (|E_I|_2 + |E_G|_2)`.
pub fn train_attack(model: &Model, pair: &ImagePair, spec: &AttackSpec) -> Result<AttackResult> {
    spec.validate()?;
    pair.validate()?;
    if model.variant != spec.variant {
        return Err(Error::config(format!(
            "attack targets {} but the model is {}",
            spec.variant, model.variant
        )));
    }
    let mut residuals = vec![
        Tensor::zeros(Tensor::from_image(&pair.input).shape()),
        Tensor::zeros(Tensor::from_image(&pair.guide).shape()),
    ];
    let mut opt = OptimizerState::new(&residuals, spec.initial_lr.clamp(1e-6, 1e-2))?;
    let mut trace = Vec::with_capacity(spec.iterations + 1);
    let area = pair.mask.area() as f64;

    let step = |residuals: &[Tensor<f64>], want_grad: bool| -> Result<(AttackTraceRow, Vec<Tensor<f64>>)> {
        let mut g = Graph::new();
        let params = model.network.as_ref().map(|n| n.bind_frozen(&mut g));
        let i0 = g.constant(Tensor::from_image(&pair.input));
        let g0 = g.constant(Tensor::from_image(&pair.guide));
        let ei = g.leaf(residuals[0].clone());
        let eg = g.leaf(residuals[1].clone());
        let i = g.add(i0, ei)?;
        let gd = g.add(g0, eg)?;
        let target = g.constant(Tensor::from_image(&pair.ground_truth));
        let bound = model.network.as_ref().zip(params.as_deref());
        let vars = build_pipeline(&mut g, bound, i, gd, pair.meta.task, model.variant, &model.gf)?;
        let dev = loss(&mut g, vars.output, target, &LossSpec::L1, Some(&pair.mask))?;
        let dev = g.mul_scalar(dev, area);
        let ni = g.norm2(ei);
        let ng = g.norm2(eg);
        let norm = g.add(ni, ng)?;
        let pen = g.mul_scalar(norm, spec.lambda);
        let objective = g.sub(dev, pen)?;
        let row = AttackTraceRow {
            iteration: 0,
            objective: g.value(objective).item(),
            deviation: g.value(dev).item(),
            res_norm: g.value(norm).item(),
        };
        if !(row.objective.is_finite() && row.deviation.is_finite()) {
            return Err(Error::numerical("attack objective is not finite"));
        }
        if !want_grad {
            return Ok((row, Vec::new()));
        }
        // Adam minimizes, so descend on the negated objective.
        let neg = g.mul_scalar(objective, -1.0);
        let grads = g.backward(neg)?;
        let gi = grads.get_or_zeros(ei, residuals[0].shape());
        let gg = grads.get_or_zeros(eg, residuals[1].shape());
        Ok((row, vec![gi, gg]))
    };

    for it in 0..spec.iterations {
        let (mut row, grads) = step(&residuals, true).map_err(|e| at_iteration(e, it))?;
        row.iteration = it;
        trace.push(row);
        opt.set_lr(attack_lr(spec, it).clamp(1e-6, 1e-2))?;
        adam_step(&mut residuals, &grads, &mut opt).map_err(|e| at_iteration(e, it))?;
    }
    let (mut last, _) = step(&residuals, false)?;
    last.iteration = spec.iterations;
    trace.push(last);

    Ok(AttackResult {
        e_input: residuals[0].to_image(0)?,
        e_guide: residuals[1].to_image(0)?,
        trace,
    })
}

fn at_iteration(e: Error, it: usize) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("attack iteration {it}: {m}")),
        other => other,
    }
}

/// Residual scaled to unit max-abs; an all-zero residual stays zero.
pub fn normalize_residual(e: &Image2D) -> Image2D {
    let peak = e.pixels().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        e.clone()
    } else {
        e.map(|v| v / peak)
    }
}

/// Adds the unit-normalized residuals, scaled by `lambda_adversarial`, to
/// the inputs and returns the prediction with its masked MAE to the label.
pub fn apply_attack(
    model: &Model,
    pair: &ImagePair,
    result: &AttackResult,
    lambda_adversarial: f64,
) -> Result<(Image2D, f64)> {
    if !(lambda_adversarial >= 0.0 && lambda_adversarial.is_finite()) {
        return Err(Error::config("lambda_adversarial must be >= 0"));
    }
    let (input, guide) = if lambda_adversarial == 0.0 {
        (pair.input.clone(), pair.guide.clone())
    } else {
        let s = lambda_adversarial;
        (
            pair.input.zip_map(&normalize_residual(&result.e_input), |a, e| a + s * e)?,
            pair.guide.zip_map(&normalize_residual(&result.e_guide), |a, e| a + s * e)?,
        )
    };
    let pred = model.predict_images(&input, &guide, pair.meta.task)?;
    let dev = mae_masked(&pred, &pair.ground_truth, &pair.mask)?;
    Ok((pred, dev))
}

/// Deviation of the attacked prediction over a grid of rescale factors.
pub fn attack_curve(model: &Model, pair: &ImagePair, result: &AttackResult, grid: &[f64]) -> Result<SweepResult> {
    let devs: Vec<f64> = grid
        .par_iter()
        .map(|&l| apply_attack(model, pair, result, l).map(|r| r.1))
        .collect::<Result<_>>()?;
    let mut out = SweepResult::default();
    for (&l, d) in grid.iter().zip(devs) {
        out.push("attack", param_str(l), model.variant.as_str(), "mae", d);
    }
    Ok(out)
}
