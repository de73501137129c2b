//! RMLP-2 style explore-then-exploit baselines.
//!
//! Rounds are grouped into epochs `k = 1, 2, ...`. Epoch `k` opens with one pure
//! exploration round at `t = k(k+1)/2` (uniform price on `[c1, c2]`) followed by
//! `k` exploitation rounds that post the greedy price under the current fit. The
//! fit is recomputed from all exploration rounds so far as soon as an epoch's
//! exploration feedback arrives, and is otherwise frozen.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{is_triangular, DemandKind};
use crate::error::Result;
use crate::likelihood::{Observation, ParamPair};
use crate::link::{LinkModel, PricingConstants};

use super::mle::{homoscedastic_eta, mle_fit, MleModel, MleOptions};
use super::{greedy_inputs, PolicyDiagnostics, PricingPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rmlp2Variant {
    /// Fits both `theta` and `eta` under the GLM demand law.
    ModifiedHeteroscedastic,
    /// Fits `theta` only, with a fixed elasticity direction.
    OriginalHomoscedastic,
    /// Fits the linear valuation law `y = x'theta + x'eta N` and prices against it.
    Valuation,
}

impl Rmlp2Variant {
    pub fn model(self) -> MleModel {
        match self {
            Rmlp2Variant::ModifiedHeteroscedastic => MleModel::GlmHeteroscedastic,
            Rmlp2Variant::OriginalHomoscedastic => MleModel::GlmHomoscedastic,
            Rmlp2Variant::Valuation => MleModel::ValuationHeteroscedastic,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rmlp2Policy {
    pub variant: Rmlp2Variant,
    pub link: LinkModel,
    pub constants: PricingConstants,
    pub current_fit: ParamPair,
    pub exploration_history: Vec<Observation>,
    pub mle_options: MleOptions,
    /// Number of rounds priced so far.
    pub round: usize,
    rng: ChaCha8Rng,
    pending_exploration: bool,
    diagnostics: PolicyDiagnostics,
}

impl Rmlp2Policy {
    pub fn new(
        variant: Rmlp2Variant,
        link: LinkModel,
        constants: PricingConstants,
        start: ParamPair,
        rng: ChaCha8Rng,
    ) -> Self {
        let mut current_fit = start;
        if variant == Rmlp2Variant::OriginalHomoscedastic {
            current_fit.eta = homoscedastic_eta(current_fit.dim());
        }
        let mle_options = MleOptions {
            beta_floor: constants.c_beta,
            ..MleOptions::default()
        };
        Self {
            variant,
            link,
            constants,
            current_fit,
            exploration_history: Vec::new(),
            mle_options,
            round: 0,
            rng,
            pending_exploration: false,
            diagnostics: PolicyDiagnostics::default(),
        }
    }

    /// Current epoch `k`: the largest `k` with `k(k+1)/2 <= round`.
    pub fn epoch_index(&self) -> usize {
        epoch_of(self.round)
    }

    /// 1-based position inside the current epoch; position 1 is the exploration round.
    pub fn position_in_epoch(&self) -> usize {
        let k = self.epoch_index();
        self.round + 1 - k * (k + 1) / 2
    }

    /// Greedy price under the current fit, clamped to `[c1, c2]`.
    pub fn exploit_price(&self, x: &DVector<f64>) -> Result<f64> {
        let (u, beta) = greedy_inputs(&self.current_fit, x, self.constants.c_beta);
        let p = match self.variant {
            Rmlp2Variant::Valuation => {
                DemandKind::MisspecifiedValuation.optimal_price(&self.link, u, beta)?
            }
            _ => self.link.greedy_price(u, beta)?,
        };
        Ok(p.clamp(self.constants.c1, self.constants.c2))
    }

    pub fn rmlp2_price(&mut self, x: &DVector<f64>) -> Result<f64> {
        self.round += 1;
        if is_triangular(self.round) {
            self.pending_exploration = true;
            Ok(self.rng.random_range(self.constants.c1..=self.constants.c2))
        } else {
            self.pending_exploration = false;
            self.exploit_price(x)
        }
    }

    pub fn rmlp2_update(&mut self, obs: &Observation) -> Result<()> {
        if !self.pending_exploration {
            return Ok(());
        }
        self.pending_exploration = false;
        self.exploration_history.push(obs.clone());
        let fit = mle_fit(
            &self.link,
            &self.exploration_history,
            self.variant.model(),
            &self.current_fit,
            &self.mle_options,
            &mut self.rng,
        )?;
        self.diagnostics.refits += 1;
        if fit.stop == super::mle::StopReason::IterationLimit {
            self.diagnostics.mle_iteration_limits += 1;
        }
        self.current_fit = fit.params;
        Ok(())
    }
}

pub fn epoch_of(round: usize) -> usize {
    if round == 0 {
        return 0;
    }
    let mut k = ((((8 * round + 1) as f64).sqrt() - 1.0) / 2.0) as usize;
    while (k + 1) * (k + 2) / 2 <= round {
        k += 1;
    }
    while k * (k + 1) / 2 > round {
        k -= 1;
    }
    k
}

impl PricingPolicy for Rmlp2Policy {
    fn price(&mut self, x: &DVector<f64>) -> Result<f64> {
        self.rmlp2_price(x)
    }

    fn update(&mut self, obs: &Observation) -> Result<()> {
        self.rmlp2_update(obs)
    }

    fn params(&self) -> Option<ParamPair> {
        Some(self.current_fit.clone())
    }

    fn diagnostics(&self) -> PolicyDiagnostics {
        self.diagnostics
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::stream_rng;
    use crate::link::derive_constants;

    fn policy(variant: Rmlp2Variant) -> Rmlp2Policy {
        let link = LinkModel::gaussian(0.5).unwrap();
        let constants = derive_constants(&link, 0.3, 2, 1 << 12).unwrap();
        Rmlp2Policy::new(
            variant,
            link,
            constants,
            ParamPair::uniform(2, 0.5),
            stream_rng(0, 16),
        )
    }

    #[test]
    fn epoch_arithmetic() {
        assert_eq!(epoch_of(0), 0);
        assert_eq!(epoch_of(1), 1);
        assert_eq!(epoch_of(2), 1);
        assert_eq!(epoch_of(3), 2);
        assert_eq!(epoch_of(5), 2);
        assert_eq!(epoch_of(6), 3);
        for t in 1..5000 {
            let k = epoch_of(t);
            assert!(k * (k + 1) / 2 <= t && t < (k + 1) * (k + 2) / 2);
        }
    }

    #[test]
    fn explores_on_triangular_rounds_and_freezes_fit_between() {
        let mut p = policy(Rmlp2Variant::ModifiedHeteroscedastic);
        let x = DVector::from_vec(vec![0.6, 0.8]);
        let mut explored = Vec::new();
        let mut last_fit = p.current_fit.clone();
        for t in 1..=30 {
            let price = p.rmlp2_price(&x).unwrap();
            if p.pending_exploration {
                explored.push(t);
                assert_eq!(p.position_in_epoch(), 1);
            } else {
                assert_eq!(price, p.exploit_price(&x).unwrap());
            }
            let before = p.current_fit.clone();
            p.rmlp2_update(&Observation::new(x.clone(), price, t % 2 == 0))
                .unwrap();
            if !explored.contains(&t) {
                assert_eq!(p.current_fit, before);
            }
            last_fit = p.current_fit.clone();
        }
        assert_eq!(explored, vec![1, 3, 6, 10, 15, 21, 28]);
        assert_eq!(p.exploration_history.len(), 7);
        assert!(last_fit.is_feasible(1e-12));
    }

    #[test]
    fn homoscedastic_variant_pins_eta() {
        let p = policy(Rmlp2Variant::OriginalHomoscedastic);
        assert_eq!(p.current_fit.eta, homoscedastic_eta(2));
    }
}
