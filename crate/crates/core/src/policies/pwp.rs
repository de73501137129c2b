//! Pricing with Perturbation: greedy price under the ONS iterate, shifted by `+-delta`.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::likelihood::{nll_grad, Observation, ParamPair};
use crate::link::{LinkModel, PricingConstants};
use crate::ons::{OnsHyper, OnsState, RoundReport};

use super::{greedy_inputs, PolicyDiagnostics, PricingPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PwpPolicy {
    pub ons: OnsState,
    pub constants: PricingConstants,
    pub link: LinkModel,
    rng: ChaCha8Rng,
    last_report: Option<RoundReport>,
    diagnostics: PolicyDiagnostics,
}

impl PwpPolicy {
    pub fn new(
        link: LinkModel,
        constants: PricingConstants,
        hyper: OnsHyper,
        start: ParamPair,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            ons: OnsState::new(hyper, start)?,
            constants,
            link,
            rng,
            last_report: None,
            diagnostics: PolicyDiagnostics::default(),
        })
    }

    /// Unperturbed greedy price `J(max(x'theta, 0), clamp(x'eta, c_beta, 1))`.
    pub fn greedy(&self, x: &DVector<f64>) -> Result<f64> {
        let (u, beta) = greedy_inputs(&self.ons.params, x, self.constants.c_beta);
        self.link.greedy_price(u, beta)
    }

    /// Perturbed price with a caller-chosen sign.
    pub fn price_with_sign(&self, x: &DVector<f64>, sign: Sign) -> Result<f64> {
        let p_hat = self.greedy(x)?;
        Ok((p_hat + sign.value() * self.constants.delta)
            .clamp(self.constants.c1, self.constants.c2))
    }

    /// Price for context `x` and the sign drawn for it.
    pub fn pwp_price(&mut self, x: &DVector<f64>) -> Result<(f64, Sign)> {
        let sign = if self.rng.random::<bool>() {
            Sign::Plus
        } else {
            Sign::Minus
        };
        Ok((self.price_with_sign(x, sign)?, sign))
    }

    /// One ONS round on the loss of `obs` at the current iterate.
    pub fn pwp_update(&mut self, obs: &Observation) -> Result<RoundReport> {
        let grad = nll_grad(&self.link, &self.ons.params, obs);
        let report = self.ons.round(&grad)?;
        if !report.projection_converged {
            self.diagnostics.projection_failures += 1;
        }
        self.last_report = Some(report);
        Ok(report)
    }

    pub fn last_report(&self) -> Option<RoundReport> {
        self.last_report
    }
}

impl PricingPolicy for PwpPolicy {
    fn price(&mut self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.pwp_price(x)?.0)
    }

    fn update(&mut self, obs: &Observation) -> Result<()> {
        self.pwp_update(obs).map(|_| ())
    }

    fn params(&self) -> Option<ParamPair> {
        Some(self.ons.params.clone())
    }

    fn diagnostics(&self) -> PolicyDiagnostics {
        PolicyDiagnostics {
            inverse_resyncs: self.ons.resyncs,
            ..self.diagnostics
        }
    }

    fn ons_report(&self) -> Option<(RoundReport, f64)> {
        self.last_report.map(|r| (r, self.ons.min_eigenvalue()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::stream_rng;
    use crate::link::derive_constants;

    fn policy(seed: u64) -> PwpPolicy {
        let link = LinkModel::gaussian(0.5).unwrap();
        let constants = derive_constants(&link, 0.3, 2, 1 << 16).unwrap();
        PwpPolicy::new(
            link,
            constants,
            OnsHyper::new(1.0, 1.0).unwrap(),
            ParamPair::uniform(2, 0.5),
            stream_rng(seed, 16),
        )
        .unwrap()
    }

    #[test]
    fn forced_signs_differ_by_two_delta() {
        let p = policy(0);
        let x = DVector::from_vec(vec![0.6, 0.8]);
        let up = p.price_with_sign(&x, Sign::Plus).unwrap();
        let down = p.price_with_sign(&x, Sign::Minus).unwrap();
        assert!((up - down - 2.0 * p.constants.delta).abs() < 1e-12);
    }

    #[test]
    fn prices_stay_in_bounds_and_params_feasible() {
        let mut p = policy(1);
        let mut rng = stream_rng(2, 0);
        for i in 0..500 {
            let a: f64 = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
            let x = DVector::from_vec(vec![a.cos(), a.sin()]);
            let (price, _) = p.pwp_price(&x).unwrap();
            assert!((p.constants.c1..=p.constants.c2).contains(&price));
            p.pwp_update(&Observation::new(x, price, i % 3 == 0))
                .unwrap();
            assert!(p.ons.params.is_feasible(1e-9));
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut p = policy(5);
            let x = DVector::from_vec(vec![0.6, 0.8]);
            let mut prices = Vec::new();
            for i in 0..200 {
                let (price, _) = p.pwp_price(&x).unwrap();
                prices.push(price.to_bits());
                p.pwp_update(&Observation::new(x.clone(), price, i % 2 == 0))
                    .unwrap();
            }
            (prices, p.ons.params.stacked())
        };
        assert_eq!(run(), run());
    }
}
