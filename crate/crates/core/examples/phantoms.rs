//! Generates one phantom pair per task and writes the images to a directory.
//!
//!     cargo run --example phantoms -- /tmp/phantoms

use std::path::PathBuf;

use deepgf::image::Task;
use deepgf::io::{read_image, write_dgf1, write_image, RawDtype};
use deepgf::phantom::{make_dataset, PhantomSpec};

fn main() -> deepgf::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "phantoms".into()));
    std::fs::create_dir_all(&dir).expect("create output directory");
    let spec = PhantomSpec::default().with_seed(11);
    for task in [Task::SuperResolution, Task::Denoising] {
        let pair = &make_dataset(&spec, task, None, 1)?[0];
        let t = task.as_str();
        write_image(&pair.input, dir.join(format!("{t}_input.pgm")))?;
        write_image(&pair.guide, dir.join(format!("{t}_guide.pgm")))?;
        write_dgf1(&pair.ground_truth, dir.join(format!("{t}_label.dgf")), RawDtype::F32)?;
        let back = read_image(dir.join(format!("{t}_label.dgf")))?;
        println!(
            "{t}: input {}x{}, guide {}x{}, f32 round trip error {:.1e}",
            pair.input.width(),
            pair.input.height(),
            pair.guide.width(),
            pair.guide.height(),
            back.max_abs_diff(&pair.ground_truth)
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}
