//! Online Newton Step on the purchase log-likelihood, fed by a fixed GLM market.
//! The iterate drifts toward the true parameters while staying inside the
//! product of unit balls.
//!
//! Run with `cargo run --release --example online_newton`.

use nalgebra::DVector;
use pricing_lab::env::stream_rng;
use pricing_lab::likelihood::nll_grad;
use pricing_lab::{LinkModel, Observation, OnsHyper, OnsState, ParamPair};
use rand::Rng;

fn main() -> pricing_lab::Result<()> {
    let link = LinkModel::gaussian(0.5)?;
    let truth = ParamPair::from_slices(&[0.6, 0.3], &[0.5, 0.7])?;
    let mut ons = OnsState::new(OnsHyper::new(1.5, 0.7)?, ParamPair::uniform(2, 0.5))?;
    let mut rng = stream_rng(11, 0);

    for t in 1..=20_000_usize {
        let x = DVector::from_vec(vec![rng.random_range(0.2..0.7), rng.random_range(0.2..0.7)]);
        let p = rng.random_range(0.2..3.0);
        let w = x.dot(&truth.eta) * p - x.dot(&truth.theta);
        let bought = rng.random::<f64>() < link.survival(w)?;
        let obs = Observation::new(x, p, bought);
        let report = ons.round(&nll_grad(&link, &ons.params, &obs))?;
        if t.is_power_of_two() || t == 20_000 {
            println!(
                "t={t:>6}  distance to truth {:.4}  projection evals {:>3}",
                ons.params.distance(&truth),
                report.projection_iterations
            );
        }
    }
    println!("final theta {:?}", ons.params.theta.as_slice());
    println!("final eta   {:?}", ons.params.eta.as_slice());
    Ok(())
}
