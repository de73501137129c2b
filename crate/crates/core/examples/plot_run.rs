//! Renders the regret plot of a run directory, creating a small run first when none is given.
//!
//! Run with `cargo run --release --example plot_run [run_dir]`.

use std::path::PathBuf;

use pricing_lab::cli::execute_run;
use pricing_lab::config::Preset;
use pricing_lab::plot::plot_run_dir;

fn main() -> pricing_lab::Result<()> {
    let dir = match std::env::args().nth(1) {
        Some(d) => PathBuf::from(d),
        None => {
            let mut config = Preset::Adversarial.config();
            config.horizon = 1 << 11;
            config.trials = 3;
            let parent = std::env::temp_dir().join("pricing-lab-example-runs");
            execute_run(&config, &parent, false)?.dir
        }
    };
    for svg in plot_run_dir(&dir)? {
        println!("wrote {}", svg.display());
    }
    Ok(())
}
