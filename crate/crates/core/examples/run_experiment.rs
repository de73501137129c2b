//! A small multi-trial experiment written to a run directory, as `pricing-lab run` does.
//!
//! Run with `cargo run --release --example run_experiment [preset] [T] [trials]`.

use pricing_lab::cli::{execute_run, resolve_config};

fn main() -> pricing_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut config = resolve_config(&args.next().unwrap_or_else(|| "stochastic".into()))?;
    config.horizon = args
        .next()
        .map_or(Ok(1 << 12), |s| s.parse())
        .unwrap_or(1 << 12);
    config.trials = args.next().map_or(Ok(4), |s| s.parse()).unwrap_or(4);
    config.validate()?;

    let parent = std::env::temp_dir().join("pricing-lab-example-runs");
    let outcome = execute_run(&config, &parent, false)?;
    println!("run directory {}", outcome.dir.display());
    for c in &outcome.curves {
        println!(
            "{:<20} slope {:.3} +- {:.3}  final {:.2} +- {:.2}",
            c.policy.label(),
            c.slope,
            c.slope_stderr,
            c.final_mean(),
            c.final_half_width()
        );
    }
    if let Some(e) = outcome.error {
        println!("incomplete: {e}");
    }
    Ok(())
}
