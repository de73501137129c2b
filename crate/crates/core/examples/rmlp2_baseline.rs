//! The explore-then-exploit baseline next to PwP on the adversarial context
//! sequence, where its exploration rounds carry little information.
//!
//! Run with `cargo run --release --example rmlp2_baseline`.

use pricing_lab::config::Preset;
use pricing_lab::harness::{loglog_slope, run_trial};
use pricing_lab::policies::PolicyKind;

fn main() -> pricing_lab::Result<()> {
    let mut config = Preset::Adversarial.config();
    config.horizon = 1 << 13;
    let spec = config.env_spec()?;
    let constants = config.constants(&spec)?;
    let settings = config.settings(false);

    for kind in [PolicyKind::Rmlp2Modified, PolicyKind::Pwp] {
        let trial = run_trial(&spec, kind, &constants, config.horizon, 0, &settings)?;
        let (slope, _) = loglog_slope(&trial.checkpoints, &trial.cum_regret)?;
        println!(
            "{kind:<16} final regret {:9.2}  log-log slope {slope:.3}  refits {}",
            trial.final_regret(),
            trial.diagnostics.policy.refits
        );
    }
    Ok(())
}
