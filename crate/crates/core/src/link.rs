//! Link function, greedy-price machinery and the constants derived from them.
//!
//! The demand model buys with probability `S(w)` at the linear index
//! `w = x'eta * p - x'theta`. For the Gaussian kind `S(w) = 1 - Phi(w / sigma)`,
//! so `S` is the survival function of `N(0, sigma^2)` valuation noise. We write
//! `f = -S'` for the noise density (strictly positive) and `F = 1 - S`.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, PricingError, Result};

/// Half-width of the bracket search for `varphi_inv`, in units of sigma.
const BRACKET_LIMIT_SIGMAS: f64 = 50.0;
/// Standardized argument above which the Mills ratio switches to its continued fraction.
const MILLS_SWITCH: f64 = 8.0;
const GRID_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    GaussianSurvival,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    sigma: f64,
    kind: LinkKind,
}

impl LinkModel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(PricingError::InvalidArgument(format!(
                "noise scale sigma must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self {
            sigma,
            kind: LinkKind::GaussianSurvival,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn kind(&self) -> LinkKind {
        self.kind
    }

    /// Purchase probability `S(w)`.
    pub fn survival(&self, w: f64) -> Result<f64> {
        ensure_finite("link argument", w)?;
        Ok(self.survival_unchecked(w))
    }

    /// `F(w) = 1 - S(w)`, computed without cancellation.
    pub fn cdf(&self, w: f64) -> Result<f64> {
        ensure_finite("link argument", w)?;
        Ok(self.cdf_unchecked(w))
    }

    /// Noise density `f(w) = -S'(w)`.
    pub fn density(&self, w: f64) -> Result<f64> {
        ensure_finite("link argument", w)?;
        Ok(std_normal_pdf(w / self.sigma) / self.sigma)
    }

    /// `f'(w)`.
    pub fn density_deriv(&self, w: f64) -> Result<f64> {
        let f = self.density(w)?;
        Ok(-w / (self.sigma * self.sigma) * f)
    }

    pub(crate) fn survival_unchecked(&self, w: f64) -> f64 {
        0.5 * erfc(w / (self.sigma * SQRT_2))
    }

    pub(crate) fn cdf_unchecked(&self, w: f64) -> f64 {
        0.5 * erfc(-w / (self.sigma * SQRT_2))
    }

    /// `f(w) / S(w)`, finite for every finite `w`.
    pub fn hazard(&self, w: f64) -> f64 {
        1.0 / (self.sigma * mills_ratio(w / self.sigma))
    }

    /// `f(w) / F(w)`, finite for every finite `w`.
    pub fn reverse_hazard(&self, w: f64) -> f64 {
        1.0 / (self.sigma * mills_ratio(-w / self.sigma))
    }

    /// `d^2 log S / dw^2 = (s'S - s^2) / S^2`.
    pub fn log_survival_curvature(&self, w: f64) -> f64 {
        let h = self.hazard(w);
        h * (w / (self.sigma * self.sigma) - h)
    }

    /// `d^2 log(1 - S) / dw^2 = (-s'(1-S) - s^2) / (1-S)^2`.
    pub fn log_cdf_curvature(&self, w: f64) -> f64 {
        let g = self.reverse_hazard(w);
        -g * (w / (self.sigma * self.sigma) + g)
    }

    /// Virtual valuation `varphi(w) = S(w)/f(w) - w`.
    pub fn varphi(&self, w: f64) -> Result<f64> {
        ensure_finite("varphi argument", w)?;
        let ratio = self.sigma * mills_ratio(w / self.sigma);
        if !ratio.is_finite() {
            return Err(PricingError::Domain {
                what: "varphi (density underflow)",
                value: w,
            });
        }
        Ok(ratio - w)
    }

    /// `varphi'(w) = (d^2 log S / dw^2) * (S/s)^2 - 1`, always below -1.
    pub fn varphi_deriv(&self, w: f64) -> Result<f64> {
        ensure_finite("varphi argument", w)?;
        let h = self.hazard(w);
        if h == 0.0 {
            return Err(PricingError::Domain {
                what: "varphi' (density underflow)",
                value: w,
            });
        }
        Ok(self.log_survival_curvature(w) / (h * h) - 1.0)
    }

    /// Inverse of `varphi` by bracketing and bisection.
    pub fn varphi_inv(&self, u: f64) -> Result<f64> {
        ensure_finite("varphi_inv argument", u)?;
        let limit = BRACKET_LIMIT_SIGMAS * self.sigma;
        let bracket_err = || PricingError::Bracket { target: u, limit };

        // varphi is decreasing: varphi(lo) >= u >= varphi(hi).
        let mut lo = -self.sigma;
        let mut hi = self.sigma;
        let mut width = self.sigma;
        while self.varphi(lo).map_err(|_| bracket_err())? < u {
            hi = lo;
            width *= 2.0;
            lo = -width;
            if lo < -limit {
                return Err(bracket_err());
            }
        }
        width = self.sigma;
        while self.varphi(hi)? > u {
            lo = hi;
            width *= 2.0;
            hi = width;
            if hi > limit {
                return Err(bracket_err());
            }
        }

        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let value = self.varphi(mid)?;
            if value == u {
                return Ok(mid);
            }
            if value > u {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * (1.0 + mid.abs()) {
                break;
            }
        }
        let w = 0.5 * (lo + hi);
        let residual = (self.varphi(w)? - u).abs();
        if residual > 1e-10 * (1.0 + u.abs()) {
            return Err(PricingError::NoConvergence {
                what: "varphi_inv bisection",
                iterations: 200,
                residual,
            });
        }
        Ok(w)
    }

    /// Greedy price `J(u, beta) = (u + varphi^-1(u)) / beta`, the maximizer of `p S(beta p - u)`.
    pub fn greedy_price(&self, u: f64, beta: f64) -> Result<f64> {
        check_beta(beta)?;
        Ok((u + self.varphi_inv(u)?) / beta)
    }

    /// Expected revenue `r(u, beta, p) = p S(beta p - u)`.
    pub fn expected_reward(&self, u: f64, beta: f64, p: f64) -> Result<f64> {
        check_beta(beta)?;
        ensure_finite("index u", u)?;
        check_price(p)?;
        Ok(p * self.survival_unchecked(beta * p - u))
    }

    /// Expected per-round regret of price `p` against the greedy price under the truth.
    pub fn instant_regret(&self, u_star: f64, beta_star: f64, p: f64) -> Result<f64> {
        let best = self.greedy_price(u_star, beta_star)?;
        let gap = self.expected_reward(u_star, beta_star, best)?
            - self.expected_reward(u_star, beta_star, p)?;
        Ok(gap.max(0.0))
    }

    /// Point elasticity of expected demand, `beta * (s/S) * p`; negative by the law of demand.
    pub fn elasticity(&self, u: f64, beta: f64, p: f64) -> Result<f64> {
        check_beta(beta)?;
        ensure_finite("index u", u)?;
        check_price(p)?;
        let w = beta * p - u;
        if self.survival_unchecked(w) <= f64::MIN_POSITIVE {
            return Err(PricingError::Domain {
                what: "elasticity (demand vanishes)",
                value: w,
            });
        }
        Ok(-beta * self.hazard(w) * p)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(PricingError::InvalidArgument(format!(
            "elasticity coefficient beta must be positive, got {beta}"
        )))
    }
}

fn check_price(p: f64) -> Result<()> {
    if p.is_finite() && p >= 0.0 {
        Ok(())
    } else {
        Err(PricingError::InvalidArgument(format!(
            "price must be non-negative, got {p}"
        )))
    }
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Mills ratio `Q(z) / phi(z)` of the standard normal.
fn mills_ratio(z: f64) -> f64 {
    if z < MILLS_SWITCH {
        0.5 * erfc(z / SQRT_2) / std_normal_pdf(z)
    } else {
        // Laplace continued fraction 1 / (z + 1/(z + 2/(z + 3/(z + ...)))).
        let mut tail = z;
        for k in (1..=60).rev() {
            tail = z + k as f64 / tail;
        }
        1.0 / tail
    }
}

/// Everything the algorithms need from the link and the elasticity floor `c_beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingConstants {
    pub sigma: f64,
    pub c_beta: f64,
    pub dim: usize,
    pub horizon: usize,
    /// `J(0, 1)`.
    pub j01: f64,
    /// Lower price bound `J(0,1)/2`.
    pub c1: f64,
    /// Upper price bound `2 J(1, c_beta)`.
    pub c2: f64,
    /// Curvature floor of the log-likelihood over `w in [-1, c2]`.
    pub c_l: f64,
    /// Bound on the score factor over `w in [-1, c2]`.
    pub c_g: f64,
    /// Exp-concavity constant `c_l / c_g^2`.
    pub c_e: f64,
    /// Lipschitz constant of the greedy price.
    pub c_j: f64,
    /// Quadratic regret constant: `Reg <= c_r (p - p*)^2`.
    pub c_r: f64,
    /// Gradient-norm bound `c_g sqrt(1 + c2^2)`.
    pub g_bound: f64,
    /// Diameter of the unit-ball product.
    pub d_diam: f64,
    /// Price perturbation magnitude.
    pub delta: f64,
}

pub fn derive_constants(
    link: &LinkModel,
    c_beta: f64,
    dim: usize,
    horizon: usize,
) -> Result<PricingConstants> {
    if !(c_beta > 0.0 && c_beta < 1.0) {
        return Err(PricingError::InvalidArgument(format!(
            "c_beta must lie in (0, 1), got {c_beta}"
        )));
    }
    if dim < 1 {
        return Err(PricingError::InvalidArgument(
            "dimension must be >= 1".into(),
        ));
    }
    if horizon < 2 {
        return Err(PricingError::InvalidArgument("horizon must be >= 2".into()));
    }

    let j01 = link.greedy_price(0.0, 1.0)?;
    let c1 = j01 / 2.0;
    let c2 = 2.0 * link.greedy_price(1.0, c_beta)?;

    let steps = ((c2 + 1.0) / GRID_STEP).ceil() as usize;
    let mut sup_curvature = f64::NEG_INFINITY;
    let mut sup_score = 0.0_f64;
    for i in 0..=steps {
        let w = (-1.0 + i as f64 * GRID_STEP).min(c2);
        let curvature = link
            .log_survival_curvature(w)
            .max(link.log_cdf_curvature(w));
        let score = link.hazard(w).max(link.reverse_hazard(w));
        ensure_finite("log-likelihood curvature", curvature)?;
        ensure_finite("score factor", score)?;
        sup_curvature = sup_curvature.max(curvature);
        sup_score = sup_score.max(score);
    }
    let c_l = -sup_curvature;
    let c_g = sup_score;
    if !(c_l > 0.0) {
        return Err(PricingError::Domain {
            what: "curvature floor c_l",
            value: c_l,
        });
    }

    let c_r = regret_curvature_bound(link, c_beta, c1, c2);
    let n = horizon as f64;
    let delta = ((dim as f64) * n.ln() / n)
        .powf(0.25)
        .min(j01 / 10.0)
        .min(0.1);

    Ok(PricingConstants {
        sigma: link.sigma(),
        c_beta,
        dim,
        horizon,
        j01,
        c1,
        c2,
        c_l,
        c_g,
        c_e: c_l / (c_g * c_g),
        c_j: (1.0 / c_beta).max(c2 / c_beta),
        c_r,
        g_bound: c_g * (1.0 + c2 * c2).sqrt(),
        d_diam: 2.0 * SQRT_2,
        delta,
    })
}

/// Half the supremum of `|d^2 r / dp^2| = beta |2 s(w) + p beta s'(w)|` over the feasible box.
fn regret_curvature_bound(link: &LinkModel, c_beta: f64, c1: f64, c2: f64) -> f64 {
    const N_UB: usize = 40;
    const N_P: usize = 400;
    let var = link.sigma() * link.sigma();
    let mut sup = 0.0_f64;
    for iu in 0..=N_UB {
        let u = iu as f64 / N_UB as f64;
        for ib in 0..=N_UB {
            let beta = c_beta + (1.0 - c_beta) * ib as f64 / N_UB as f64;
            for ip in 0..=N_P {
                let p = c1 + (c2 - c1) * ip as f64 / N_P as f64;
                let w = beta * p - u;
                let f = std_normal_pdf(w / link.sigma()) / link.sigma();
                // s = -f, s' = (w / sigma^2) f
                let second = beta * (-2.0 * f + p * beta * (w / var) * f);
                sup = sup.max(second.abs());
            }
        }
    }
    sup / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn link() -> LinkModel {
        LinkModel::gaussian(0.5).unwrap()
    }

    /// Standard normal CDF by composite Simpson quadrature of the density from 0.
    fn phi_cdf_quadrature(z: f64) -> f64 {
        let n = 20_000;
        let h = z / n as f64;
        let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
        let mut acc = pdf(0.0) + pdf(z);
        for i in 1..n {
            let t = i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(t);
        }
        0.5 + acc * h / 3.0
    }

    #[test]
    fn survival_known_values() {
        let l = link();
        assert_eq!(l.survival(0.0).unwrap(), 0.5);
        assert!(l.survival(40.0).unwrap() < 1e-300);
        assert_relative_eq!(l.survival(-40.0).unwrap(), 1.0);
        let oracle = 1.0 - phi_cdf_quadrature(1.0);
        assert_relative_eq!(l.survival(0.5).unwrap(), oracle, epsilon = 1e-12);
        assert_relative_eq!(
            l.survival(0.5).unwrap(),
            0.158_655_253_931_457_05,
            epsilon = 1e-14
        );
        assert!(l.survival(f64::NAN).is_err());
        assert!(l.survival(f64::INFINITY).is_err());
    }

    #[test]
    fn survival_is_monotone_with_negative_slope() {
        let l = link();
        let mut prev = l.survival(-5.0).unwrap();
        for i in 1..=1000 {
            let w = -5.0 + i as f64 * 0.01;
            let s = l.survival(w).unwrap();
            assert!(s <= prev && (0.0..=1.0).contains(&s));
            assert!(l.density(w).unwrap() > 0.0);
            prev = s;
        }
    }

    #[test]
    fn hazard_is_continuous_across_the_fraction_switch() {
        let l = link();
        let w = MILLS_SWITCH * l.sigma();
        let below = l.hazard(w - 1e-9);
        let above = l.hazard(w + 1e-9);
        assert_relative_eq!(below, above, max_relative = 1e-8);
        // f/S is available far past the point where S itself underflows.
        assert!(l.hazard(100.0).is_finite());
    }

    #[test]
    fn varphi_at_zero() {
        let l = link();
        let pdf0 = 1.0 / (0.5 * (2.0 * PI).sqrt());
        assert_relative_eq!(l.varphi(0.0).unwrap(), 0.5 / pdf0, epsilon = 1e-12);
        assert_relative_eq!(
            l.varphi(0.0).unwrap(),
            0.626_657_068_657_750_1,
            epsilon = 1e-12
        );
        assert!(l.varphi(0.1).unwrap() < l.varphi(0.0).unwrap());
    }

    #[test]
    fn varphi_round_trips() {
        let l = link();
        let w = l.varphi_inv(0.3).unwrap();
        assert!((l.varphi(w).unwrap() - 0.3).abs() <= 1e-9);
        assert!(l.varphi_inv(l.varphi(0.0).unwrap()).unwrap().abs() <= 1e-9);
        assert!(l.varphi_inv(0.5).unwrap() > l.varphi_inv(0.7).unwrap());
    }

    #[test]
    fn varphi_inv_of_zero_matches_grid_scan() {
        let l = link();
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=100_000 {
            let w = -5.0 + i as f64 * 1e-4;
            let gap = (l.survival(w).unwrap() / l.density(w).unwrap() - w).abs();
            if gap < best.0 {
                best = (gap, w);
            }
        }
        assert!((l.varphi_inv(0.0).unwrap() - best.1).abs() <= 1e-4);
    }

    #[test]
    fn varphi_inv_reports_bracket_failure() {
        let l = link();
        assert!(matches!(
            l.varphi_inv(1e308),
            Err(PricingError::Bracket { .. })
        ));
        assert!(l.varphi_inv(-1e6).is_err());
        assert!(l.varphi_inv(1e6).is_ok());
    }

    #[test]
    fn greedy_price_scaling_and_grid_value() {
        let l = link();
        let j = l.greedy_price(0.4, 0.7).unwrap();
        assert_relative_eq!(j, l.greedy_price(0.4, 1.0).unwrap() / 0.7, epsilon = 1e-9);

        let mut best = (0.0, 0.0);
        for i in 0..=30_000 {
            let p = i as f64 * 1e-4;
            let r = p * l.survival(p).unwrap();
            if r > best.0 {
                best = (r, p);
            }
        }
        let j01 = l.greedy_price(0.0, 1.0).unwrap();
        assert!((j01 - best.1).abs() <= 1e-4);
        assert!((j01 - 0.3759).abs() <= 1e-4);
        assert_relative_eq!(
            l.expected_reward(0.0, 1.0, j01).unwrap(),
            best.0,
            epsilon = 1e-8
        );
        assert!(l.greedy_price(0.1, 0.0).is_err());
        assert!(l.greedy_price(0.1, -1.0).is_err());
    }

    #[test]
    fn reward_and_regret_basics() {
        let l = link();
        assert_eq!(l.expected_reward(0.3, 0.6, 0.0).unwrap(), 0.0);
        let lhs = l.expected_reward(0.5, 0.6, 1.0).unwrap();
        let rhs = l.expected_reward(0.5, 1.0, 0.6).unwrap() / 0.6;
        assert!((lhs - rhs).abs() <= 1e-12);
        assert!(l.expected_reward(0.5, 0.6, -1.0).is_err());

        let j = l.greedy_price(0.6, 0.8).unwrap();
        assert!(l.instant_regret(0.6, 0.8, j).unwrap() <= 1e-15);
        assert!(l.instant_regret(0.6, 0.8, j + 0.1).unwrap() > 0.0);
    }

    #[test]
    fn regret_is_locally_quadratic() {
        let l = link();
        let k = derive_constants(&l, 0.3, 2, 1 << 16).unwrap();
        let step = 1e-2;
        for &(u, beta) in &[(0.0, 1.0), (0.5, 0.8), (1.0, 0.3), (0.8, 0.5)] {
            let j = l.greedy_price(u, beta).unwrap();
            for p in [j - step, j + step] {
                assert!(l.instant_regret(u, beta, p).unwrap() <= k.c_r * step * step);
            }
        }
    }

    #[test]
    fn elasticity_properties() {
        let l = link();
        assert!(l.elasticity(0.5, 0.8, 1.0).unwrap() < 0.0);
        // Doubling beta with the linear index held fixed doubles the prefactor.
        let (u0, b0, p0) = (0.2, 0.4, 1.0);
        let w = b0 * p0 - u0;
        let e1 = l.elasticity(u0, b0, p0).unwrap();
        let e2 = l.elasticity(2.0 * b0 * p0 - w, 2.0 * b0, p0).unwrap();
        assert_relative_eq!(e2 / e1, 2.0, epsilon = 1e-12);
        // w = 0: S = 1/2, f = pdf(0)/sigma.
        let f0 = 1.0 / (0.5 * (2.0 * PI).sqrt());
        assert_relative_eq!(
            l.elasticity(0.5, 1.0, 0.5).unwrap(),
            -2.0 * f0 * 0.5,
            epsilon = 1e-12
        );
        assert!(l.elasticity(0.0, 1.0, 100.0).is_err());
    }

    #[test]
    fn constants_for_reference_setting() {
        let l = link();
        let k = derive_constants(&l, 0.3, 2, 1 << 16).unwrap();
        let branch_a = (2.0 * (65536f64).ln() / 65536.0).powf(0.25);
        assert!(branch_a > 0.1);
        assert_eq!(k.delta, k.j01 / 10.0);
        assert!((k.delta - 0.0376).abs() < 1e-4);
        assert_eq!(k.c1, k.j01 / 2.0);
        assert_eq!(k.c2, 2.0 * l.greedy_price(1.0, 0.3).unwrap());
        assert!(0.0 < k.c1 && k.c1 < k.j01 && k.j01 <= k.c2);
        assert!(k.c_l > 0.0 && k.c_e > 0.0);
        assert_eq!(k.c_e, k.c_l / (k.c_g * k.c_g));
        assert_eq!(k.d_diam, 2.0 * SQRT_2);
        assert!(derive_constants(&l, 1.0, 2, 100).is_err());
        assert!(derive_constants(&l, 0.3, 0, 100).is_err());
        assert!(derive_constants(&l, 0.3, 2, 1).is_err());
    }

    #[test]
    fn delta_takes_the_horizon_branch_for_long_horizons() {
        let l = link();
        let n = 1usize << 40;
        let k = derive_constants(&l, 0.3, 2, n).unwrap();
        let nf = n as f64;
        assert_relative_eq!(k.delta, (2.0 * nf.ln() / nf).powf(0.25), epsilon = 1e-15);
    }
}
