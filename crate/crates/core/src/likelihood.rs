//! Per-round negative log-likelihood of a hypothesis `[theta; eta]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PricingError, Result};
use crate::link::LinkModel;

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// A hypothesis `[theta; eta]` in `R^{2d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPair {
    pub theta: DVector<f64>,
    pub eta: DVector<f64>,
}

impl ParamPair {
    pub fn new(theta: DVector<f64>, eta: DVector<f64>) -> Result<Self> {
        if theta.len() != eta.len() || theta.is_empty() {
            return Err(PricingError::InvalidArgument(format!(
                "theta and eta must share a positive dimension ({} vs {})",
                theta.len(),
                eta.len()
            )));
        }
        Ok(Self { theta, eta })
    }

    pub fn from_slices(theta: &[f64], eta: &[f64]) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(theta),
            DVector::from_column_slice(eta),
        )
    }

    /// Both blocks set to the all-ones direction with norm `radius`.
    pub fn uniform(dim: usize, radius: f64) -> Self {
        let v = DVector::from_element(dim, radius / (dim as f64).sqrt());
        Self {
            theta: v.clone(),
            eta: v,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// The stacked vector `[theta; eta]`.
    pub fn stacked(&self) -> DVector<f64> {
        let d = self.dim();
        DVector::from_fn(2 * d, |i, _| {
            if i < d {
                self.theta[i]
            } else {
                self.eta[i - d]
            }
        })
    }

    pub fn from_stacked(v: &DVector<f64>) -> Result<Self> {
        if !v.len().is_multiple_of(2) || v.is_empty() {
            return Err(PricingError::InvalidArgument(format!(
                "stacked parameter length must be even and positive, got {}",
                v.len()
            )));
        }
        let d = v.len() / 2;
        Ok(Self {
            theta: v.rows(0, d).into_owned(),
            eta: v.rows(d, d).into_owned(),
        })
    }

    /// Both blocks inside the closed unit ball, up to `tol`.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.theta.norm() <= 1.0 + tol && self.eta.norm() <= 1.0 + tol
    }

    pub fn distance(&self, other: &ParamPair) -> f64 {
        ((&self.theta - &other.theta).norm_squared() + (&self.eta - &other.eta).norm_squared())
            .sqrt()
    }
}

/// One round of feedback: context, posted price and the purchase indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: DVector<f64>,
    pub p: f64,
    pub bought: bool,
}

impl Observation {
    pub fn new(x: DVector<f64>, p: f64, bought: bool) -> Self {
        Self { x, p, bought }
    }

    /// Checks `||x|| <= 1` and `p` inside `[c1, c2]`.
    pub fn validate(&self, c1: f64, c2: f64) -> Result<()> {
        if self.x.norm() > 1.0 + 1e-12 {
            return Err(PricingError::InvalidArgument(format!(
                "context norm {} exceeds 1",
                self.x.norm()
            )));
        }
        if !(c1 - 1e-12..=c2 + 1e-12).contains(&self.p) {
            return Err(PricingError::InvalidArgument(format!(
                "price {} outside [{c1}, {c2}]",
                self.p
            )));
        }
        Ok(())
    }

    /// The direction `[-x; p x]` that every derivative of the loss is built on.
    pub fn design(&self) -> DVector<f64> {
        let d = self.x.len();
        DVector::from_fn(2 * d, |i, _| {
            if i < d {
                -self.x[i]
            } else {
                self.p * self.x[i - d]
            }
        })
    }
}

/// Linear index `w = x'eta * p - x'theta`.
pub fn linear_index(params: &ParamPair, obs: &Observation) -> f64 {
    obs.x.dot(&params.eta) * obs.p - obs.x.dot(&params.theta)
}

/// Negative log-likelihood and whether a probability clamp fired.
pub fn nll_with_clamp(link: &LinkModel, params: &ParamPair, obs: &Observation) -> (f64, bool) {
    nll_at_index(link, linear_index(params, obs), obs.bought)
}

pub(crate) fn nll_at_index(link: &LinkModel, w: f64, bought: bool) -> (f64, bool) {
    // S and F are each computed directly so neither loses precision near 0 or 1.
    let prob = if bought {
        link.survival_unchecked(w)
    } else {
        link.cdf_unchecked(w)
    };
    let clamped = prob.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    (-clamped.ln(), clamped != prob)
}

pub fn nll(link: &LinkModel, params: &ParamPair, obs: &Observation) -> f64 {
    nll_with_clamp(link, params, obs).0
}

/// `d loss / dw` at the linear index.
pub(crate) fn score_factor(link: &LinkModel, w: f64, bought: bool) -> f64 {
    if bought {
        link.hazard(w)
    } else {
        -link.reverse_hazard(w)
    }
}

/// `d^2 loss / dw^2` at the linear index.
pub(crate) fn curvature_factor(link: &LinkModel, w: f64, bought: bool) -> f64 {
    if bought {
        -link.log_survival_curvature(w)
    } else {
        -link.log_cdf_curvature(w)
    }
}

/// Gradient with respect to `[theta; eta]`: a multiple of `[-x; p x]`.
pub fn nll_grad(link: &LinkModel, params: &ParamPair, obs: &Observation) -> DVector<f64> {
    let w = linear_index(params, obs);
    obs.design() * score_factor(link, w, obs.bought)
}

/// Hessian with respect to `[theta; eta]`: a multiple of `v v'` with `v = [-x; p x]`.
pub fn nll_hessian(link: &LinkModel, params: &ParamPair, obs: &Observation) -> DMatrix<f64> {
    let w = linear_index(params, obs);
    let v = obs.design();
    &v * v.transpose() * curvature_factor(link, w, obs.bought)
}

/// `L(theta, eta)`: the sum of per-round losses.
pub fn cumulative_nll(link: &LinkModel, params: &ParamPair, history: &[Observation]) -> f64 {
    history.iter().map(|obs| nll(link, params, obs)).sum()
}
