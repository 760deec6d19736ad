//! Trains a small withGF generator for a few hundred iterations and compares
//! it with filtering by the raw guide on held-out phantoms.
//!
//! At this budget withGF usually still trails onlyGF; the acceptance suite
//! trains five times longer on 128 pairs.

use deepgf::config::RunConfig;
use deepgf::dataset::{generate, Split};
use deepgf::experiments::evaluate;
use deepgf::guided::GuidedFilterParams;
use deepgf::image::Task;
use deepgf::net::GeneratorConfig;
use deepgf::pipeline::{Model, Variant};
use deepgf::train::{train_observed, TrainConfig};

fn main() -> deepgf::Result<()> {
    let mut cfg = RunConfig::defaults(Task::SuperResolution);
    cfg.n_train = 32;
    cfg.n_val = 2;
    cfg.n_test = 4;
    cfg.generator = GeneratorConfig::unet_mini(Task::SuperResolution);
    cfg.train.initial_lr = 2e-3;
    cfg.train.max_iterations = 1000;
    cfg.train.val_every = 100;
    cfg.train.gf = GuidedFilterParams::new(8, 1e-4);
    let ds = generate(&cfg)?;
    let tc = TrainConfig { variant: Variant::WithGf, ..cfg.train.clone() };
    let net = deepgf::net::build_generator(&cfg.generator)?;
    let cp = train_observed(net, &ds.split(Split::Train), &ds.split(Split::Val), &tc, |h| {
        println!("iter {:>4}  lr {:.1e}  val {:.5}", h.iteration, h.lr, h.val_loss)
    })?;
    let only = Model::only_gf(tc.gf);
    let rep = evaluate(&[&cp.model(), &only], &ds.split(Split::Test), &ds.ids(Split::Test))?;
    for v in rep.variants() {
        let [mae, ssim, _] = rep.aggregate(&v).unwrap();
        println!("{v:<10} mae {:.4}  ssim {:.4}", mae.mean, ssim.mean);
    }
    Ok(())
}
