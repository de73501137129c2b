//! Experiment configuration documents, presets and their materialized snapshots.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{ContextKind, DemandKind, EnvSpec, Expansion};
use crate::error::{PricingError, Result};
use crate::harness::PolicySettings;
use crate::link::{derive_constants, PricingConstants};
use crate::ons::OnsHyper;
use crate::policies::PolicyKind;

/// Environment variable that replaces `base_seed` when set.
pub const SEED_ENV: &str = "PRICING_LAB_SEED";

const MAX_DIM: usize = 64;
const MAX_HORIZON: usize = 1 << 24;

/// Ground truth and context covariance fixed by a previous run, for exact replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Materialized {
    pub theta_star: Vec<f64>,
    pub eta_star: Vec<f64>,
    /// Row-major `d x d`.
    pub cov_x: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub d: usize,
    pub sigma: f64,
    pub c_beta: f64,
    pub trials: usize,
    pub base_seed: u64,
    pub context_kind: ContextKind,
    pub demand_kind: DemandKind,
    pub policies: Vec<PolicyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansion: Option<Expansion>,
    pub output_dir: PathBuf,
    /// ONS step parameter and regularizer; the analysis values are used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ons: Option<OnsHyper>,
    #[serde(default = "default_init_radius")]
    pub init_radius: f64,
    #[serde(default = "default_mle_restarts")]
    pub mle_restarts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materialized: Option<Materialized>,
}

fn default_init_radius() -> f64 {
    0.5
}

fn default_mle_restarts() -> usize {
    8
}

/// The shipped experiment presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Stochastic,
    Adversarial,
    Adaptivity,
    Misspecification,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Stochastic,
        Preset::Adversarial,
        Preset::Adaptivity,
        Preset::Misspecification,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Stochastic => "stochastic",
            Preset::Adversarial => "adversarial",
            Preset::Adaptivity => "adaptivity",
            Preset::Misspecification => "misspecification",
        }
    }

    pub fn json(self) -> &'static str {
        match self {
            Preset::Stochastic => include_str!("../presets/stochastic.json"),
            Preset::Adversarial => include_str!("../presets/adversarial.json"),
            Preset::Adaptivity => include_str!("../presets/adaptivity.json"),
            Preset::Misspecification => include_str!("../presets/misspecification.json"),
        }
    }

    pub fn config(self) -> ExperimentConfig {
        ExperimentConfig::from_json(self.json()).expect("shipped presets are valid")
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl ExperimentConfig {
    /// Strict parse followed by range validation. Parse errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| {
            PricingError::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PricingError::Data {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|e| match e {
            PricingError::Config(msg) => PricingError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PricingError::Config(msg));
        if self.name.trim().is_empty() {
            return bad("name must not be empty".into());
        }
        if !(16..=MAX_HORIZON).contains(&self.horizon) {
            return bad(format!(
                "T must lie in [16, {MAX_HORIZON}], got {}",
                self.horizon
            ));
        }
        if !(1..=MAX_DIM).contains(&self.d) {
            return bad(format!("d must lie in [1, {MAX_DIM}], got {}", self.d));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.c_beta > 0.0 && self.c_beta <= 0.3) {
            return bad(format!(
                "c_beta must lie in (0, 0.3] for the ground-truth generator, got {}",
                self.c_beta
            ));
        }
        if self.trials < 2 {
            return bad(format!("trials must be at least 2, got {}", self.trials));
        }
        if self.policies.is_empty() {
            return bad("policies must not be empty".into());
        }
        for (i, p) in self.policies.iter().enumerate() {
            if self.policies[..i].contains(p) {
                return bad(format!("policy {p} listed twice"));
            }
        }
        if self.context_kind == ContextKind::AdversarialTriangular && self.d != 2 {
            return bad("the adversarial context sequence needs d = 2".into());
        }
        if let Some(exp) = &self.expansion {
            if exp.x0.len() != self.d || exp.a.is_empty() {
                return bad(format!(
                    "expansion needs x0 of length {} and a nonempty index list",
                    self.d
                ));
            }
            if self.policies.contains(&PolicyKind::Oracle) {
                return bad("the oracle policy cannot be combined with an expansion".into());
            }
        }
        if !(self.init_radius >= 0.0 && self.init_radius <= 1.0) {
            return bad(format!(
                "init_radius must lie in [0, 1], got {}",
                self.init_radius
            ));
        }
        if let Some(h) = self.ons {
            OnsHyper::new(h.gamma, h.epsilon).map_err(|e| PricingError::Config(e.to_string()))?;
        }
        if let Some(m) = &self.materialized {
            if m.theta_star.len() != self.d
                || m.eta_star.len() != self.d
                || m.cov_x.len() != self.d
                || m.cov_x.iter().any(|row| row.len() != self.d)
            {
                return bad("materialized ground truth does not match d".into());
            }
        }
        Ok(())
    }

    /// Applies the seed override from the environment, if any.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.base_seed = raw.trim().parse().map_err(|_| {
                PricingError::Config(format!(
                    "{SEED_ENV} must be an unsigned integer, got {raw:?}"
                ))
            })?;
        }
        Ok(self)
    }

    /// The market for this experiment: pinned ground truth when present, otherwise drawn
    /// from `base_seed`.
    pub fn env_spec(&self) -> Result<EnvSpec> {
        let mut spec = EnvSpec::generate(
            self.d,
            self.sigma,
            self.c_beta,
            self.context_kind,
            self.demand_kind,
            self.expansion.clone(),
            self.base_seed,
        )?;
        if let Some(m) = &self.materialized {
            spec.theta_star = DVector::from_vec(m.theta_star.clone());
            spec.eta_star = DVector::from_vec(m.eta_star.clone());
            spec.cov_x = DMatrix::from_fn(self.d, self.d, |i, j| m.cov_x[i][j]);
        }
        spec.validate(self.c_beta)?;
        Ok(spec)
    }

    /// Constants for the policy-side dimension (after any expansion).
    pub fn constants(&self, spec: &EnvSpec) -> Result<PricingConstants> {
        derive_constants(&spec.link()?, self.c_beta, spec.policy_dim(), self.horizon)
    }

    pub fn settings(&self, trace: bool) -> PolicySettings {
        PolicySettings {
            c_beta: self.c_beta,
            ons: self.ons,
            init_radius: self.init_radius,
            mle_restarts: self.mle_restarts,
            trace,
        }
    }

    /// This config with the ground truth of `spec` pinned, so a rerun replays it exactly.
    pub fn snapshot(&self, spec: &EnvSpec) -> Self {
        let d = spec.d;
        Self {
            materialized: Some(Materialized {
                theta_star: spec.theta_star.iter().copied().collect(),
                eta_star: spec.eta_star.iter().copied().collect(),
                cov_x: (0..d)
                    .map(|i| (0..d).map(|j| spec.cov_x[(i, j)]).collect())
                    .collect(),
            }),
            ..self.clone()
        }
    }
}
