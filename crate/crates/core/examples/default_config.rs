//! Prints the canonical default run configuration for both tasks.
//!
//!     cargo run --example default_config > run.cfg

use deepgf::config::RunConfig;
use deepgf::image::Task;

fn main() {
    for task in [Task::SuperResolution, Task::Denoising] {
        println!("# {}", task.as_str());
        print!("{}", RunConfig::defaults(task).to_text());
        println!();
    }
}
