//! One Pricing-with-Perturbation trial on a stochastic market, with the oracle
//! run on the same contexts and demand noise for comparison.
//!
//! Run with `cargo run --release --example pwp_trial`.

use pricing_lab::config::Preset;
use pricing_lab::harness::run_trial;
use pricing_lab::policies::PolicyKind;

fn main() -> pricing_lab::Result<()> {
    let mut config = Preset::Stochastic.config();
    config.horizon = 1 << 13;
    let spec = config.env_spec()?;
    let constants = config.constants(&spec)?;
    let settings = config.settings(false);
    println!("theta* = {:?}", spec.theta_star.as_slice());
    println!("eta*   = {:?}", spec.eta_star.as_slice());
    println!(
        "price range [{:.4}, {:.4}], perturbation {:.4}",
        constants.c1, constants.c2, constants.delta
    );

    let pwp = run_trial(
        &spec,
        PolicyKind::Pwp,
        &constants,
        config.horizon,
        0,
        &settings,
    )?;
    let oracle = run_trial(
        &spec,
        PolicyKind::Oracle,
        &constants,
        config.horizon,
        0,
        &settings,
    )?;
    for (t, r) in pwp.checkpoints.iter().zip(&pwp.cum_regret).step_by(8) {
        println!("t={t:>5}  cumulative regret {r:9.3}");
    }
    println!("oracle cumulative regret {}", oracle.final_regret());
    if let Some(p) = &pwp.final_params {
        println!(
            "final estimate theta {:?} eta {:?}",
            p.theta.as_slice(),
            p.eta.as_slice()
        );
    }
    println!("diagnostics {:?}", pwp.diagnostics);
    Ok(())
}
