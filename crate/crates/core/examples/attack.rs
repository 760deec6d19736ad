//! Learns adversarial residuals against an untrained withGF model and prints
//! the optimization trace and the attacked-error curve.

use deepgf::config::{AttackSpec, RunConfig};
use deepgf::dataset::{generate, Split};
use deepgf::experiments::{attack_curve, train_attack};
use deepgf::image::Task;
use deepgf::net::build_generator;
use deepgf::pipeline::{Model, Variant};

fn main() -> deepgf::Result<()> {
    let mut cfg = RunConfig::defaults(Task::SuperResolution);
    cfg.n_test = 1;
    cfg.generator.base_channels = 8;
    let pair = &generate(&cfg)?.split(Split::Test)[0];
    let model = Model::new(Variant::WithGf, Some(build_generator(&cfg.generator)?), cfg.train.gf)?;
    let spec = AttackSpec { iterations: 50, variant: Variant::WithGf, ..cfg.attack.clone() };
    let result = train_attack(&model, pair, &spec)?;
    for row in result.trace.iter().step_by(10) {
        println!("iter {:>3}  deviation {:.2}  res_norm {:.3}", row.iteration, row.deviation, row.res_norm);
    }
    print!("{}", attack_curve(&model, pair, &result, &[0.0, 0.25, 0.5, 1.0])?.to_csv());
    Ok(())
}
