//! Radius and guide-noise sweeps on untrained models, printed as CSV.
//!
//! Untrained, withGF reduces to filtering with the raw guide and withoutGF to
//! the upsampled input, so this shows the filter's own behavior.

use deepgf::config::RunConfig;
use deepgf::dataset::{generate, Split};
use deepgf::experiments::{content_preservation_sweep, robustness_sweep};
use deepgf::guided::GuidedFilterParams;
use deepgf::image::Task;
use deepgf::net::build_generator;
use deepgf::pipeline::{Model, Variant};

fn main() -> deepgf::Result<()> {
    let mut cfg = RunConfig::defaults(Task::SuperResolution);
    cfg.n_test = 4;
    cfg.generator.base_channels = 8;
    let test = generate(&cfg)?.split(Split::Test);
    let with_gf = Model::new(Variant::WithGf, Some(build_generator(&cfg.generator)?), cfg.train.gf)?;
    let without_gf = Model::new(Variant::WithoutGf, Some(build_generator(&cfg.generator)?), cfg.train.gf)?;
    let per: Vec<(usize, Model)> = [1, 2, 4, 8, 16]
        .into_iter()
        .map(|r| (r, with_gf.with_gf(GuidedFilterParams::new(r, cfg.train.gf.epsilon))))
        .collect();
    print!("{}", content_preservation_sweep(&per, &without_gf, &test)?.to_csv());
    print!("{}", robustness_sweep(&[&with_gf, &without_gf], &test, &cfg.sweep.sigmas, 5)?.to_csv());
    Ok(())
}
