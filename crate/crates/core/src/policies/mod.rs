//! Pricing policies sharing one price/update interface.

pub mod mle;
pub mod pwp;
pub mod rmlp2;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::env::DemandKind;
use crate::error::Result;
use crate::likelihood::{Observation, ParamPair};
use crate::link::LinkModel;
use crate::ons::RoundReport;

pub use mle::{mle_fit, MleFit, MleModel, MleOptions, StopReason};
pub use pwp::{PwpPolicy, Sign};
pub use rmlp2::{Rmlp2Policy, Rmlp2Variant};

/// Counters a policy accumulates over a trial.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDiagnostics {
    pub projection_failures: usize,
    pub inverse_resyncs: usize,
    pub refits: usize,
    pub mle_iteration_limits: usize,
}

pub trait PricingPolicy: Send {
    /// Posts a price for context `x`. Called exactly once per round, before `update`.
    fn price(&mut self, x: &DVector<f64>) -> Result<f64>;

    /// Feeds back the round's outcome.
    fn update(&mut self, obs: &Observation) -> Result<()>;

    /// Current parameter estimate, when the policy keeps one.
    fn params(&self) -> Option<ParamPair>;

    fn diagnostics(&self) -> PolicyDiagnostics {
        PolicyDiagnostics::default()
    }

    /// Latest ONS round and the smallest eigenvalue of its metric.
    fn ons_report(&self) -> Option<(RoundReport, f64)> {
        None
    }
}

/// Selects a policy in configuration files and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Pwp,
    Rmlp2Modified,
    Rmlp2Homoscedastic,
    Rmlp2Valuation,
    /// Knows the true parameters; has zero regret.
    Oracle,
}

impl PolicyKind {
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Pwp => "pwp",
            PolicyKind::Rmlp2Modified => "rmlp2-modified",
            PolicyKind::Rmlp2Homoscedastic => "rmlp2-homoscedastic",
            PolicyKind::Rmlp2Valuation => "rmlp2-valuation",
            PolicyKind::Oracle => "oracle",
        }
    }

    pub fn rmlp2_variant(self) -> Option<Rmlp2Variant> {
        match self {
            PolicyKind::Rmlp2Modified => Some(Rmlp2Variant::ModifiedHeteroscedastic),
            PolicyKind::Rmlp2Homoscedastic => Some(Rmlp2Variant::OriginalHomoscedastic),
            PolicyKind::Rmlp2Valuation => Some(Rmlp2Variant::Valuation),
            _ => None,
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// `(max(x'theta, 0), clamp(x'eta, c_beta, 1))`, the inputs every greedy price uses.
pub fn greedy_inputs(params: &ParamPair, x: &DVector<f64>, c_beta: f64) -> (f64, f64) {
    let u = x.dot(&params.theta).max(0.0);
    let beta = x.dot(&params.eta).clamp(c_beta, 1.0);
    (u, beta)
}

/// Posts the revenue-optimal price under the true parameters and demand law.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    pub truth: ParamPair,
    pub demand: DemandKind,
    pub link: LinkModel,
}

impl PricingPolicy for OraclePolicy {
    fn price(&mut self, x: &DVector<f64>) -> Result<f64> {
        let u = x.dot(&self.truth.theta);
        let beta = x.dot(&self.truth.eta);
        self.demand.optimal_price(&self.link, u, beta)
    }

    fn update(&mut self, _obs: &Observation) -> Result<()> {
        Ok(())
    }

    fn params(&self) -> Option<ParamPair> {
        Some(self.truth.clone())
    }
}
