//! Trains briefly, then compares the learned guidance map with the label and
//! with the raw guide.

use deepgf::config::RunConfig;
use deepgf::dataset::{generate, Split};
use deepgf::image::Task;
use deepgf::metrics::pearson_masked;
use deepgf::pipeline::{guidance_map, Variant};
use deepgf::train::{train, TrainConfig};

fn main() -> deepgf::Result<()> {
    let mut cfg = RunConfig::defaults(Task::SuperResolution);
    cfg.n_train = 8;
    cfg.n_val = 2;
    cfg.n_test = 2;
    cfg.generator.base_channels = 8;
    cfg.train.initial_lr = 2e-3;
    cfg.train.max_iterations = 200;
    let ds = generate(&cfg)?;
    let tc = TrainConfig { variant: Variant::WithGf, ..cfg.train.clone() };
    let cp = train(&cfg.generator, &ds.split(Split::Train), &ds.split(Split::Val), &tc)?;
    let net = cp.model().network.expect("withGF has a network");
    for (id, p) in ds.ids(Split::Test).iter().zip(ds.split(Split::Test)) {
        let m = guidance_map(&net, &p.input, &p.guide)?;
        println!(
            "{id}: corr(M, label) {:.3}  corr(M, guide) {:.3}",
            pearson_masked(&m, &p.ground_truth, &p.mask)?,
            pearson_masked(&m, &p.guide, &p.mask)?
        );
    }
    Ok(())
}
