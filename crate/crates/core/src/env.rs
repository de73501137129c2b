//! Ground truth, context streams, demand samplers and context expansion.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PricingError, Result};
use crate::link::LinkModel;

const GROUND_TRUTH_BUDGET: usize = 1000;
const TRUTH_ENTRY_RANGE: (f64, f64) = (0.3, 1.0);
const TRUTH_NORM: f64 = 0.9;
const CONTEXT_MEAN: f64 = 10.0;
const COV_EIGEN_RANGE: (f64, f64) = (0.5, 2.0);

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    GroundTruth = 0,
    Covariance = 1,
    Contexts = 2,
    DemandNoise = 3,
    /// Policy streams are `Policy + policy index`.
    Policy = 16,
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextKind {
    StochasticGaussian,
    AdversarialTriangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemandKind {
    /// `D ~ Ber(S(x'eta p - x'theta))`.
    Glm,
    /// `y = (x'theta + N) / x'eta`, buy iff `p <= y`; same law as `Glm`.
    Valuation,
    /// `y = x'theta + x'eta N`, buy iff `p <= y`.
    MisspecifiedValuation,
}

impl DemandKind {
    /// Purchase probability at index `u = x'theta`, coefficient `beta = x'eta`.
    pub fn purchase_probability(&self, link: &LinkModel, u: f64, beta: f64, p: f64) -> f64 {
        match self {
            DemandKind::Glm | DemandKind::Valuation => link.survival_unchecked(beta * p - u),
            DemandKind::MisspecifiedValuation => link.survival_unchecked((p - u) / beta),
        }
    }

    /// Revenue-maximizing price under this demand law.
    pub fn optimal_price(&self, link: &LinkModel, u: f64, beta: f64) -> Result<f64> {
        match self {
            DemandKind::Glm | DemandKind::Valuation => link.greedy_price(u, beta),
            // p S((p - u)/beta) peaks where varphi((p - u)/beta) = u / beta.
            DemandKind::MisspecifiedValuation => {
                if !(beta > 0.0) {
                    return Err(PricingError::InvalidArgument(format!(
                        "valuation scale must be positive, got {beta}"
                    )));
                }
                Ok(u + beta * link.varphi_inv(u / beta)?)
            }
        }
    }

    pub fn expected_reward(&self, link: &LinkModel, u: f64, beta: f64, p: f64) -> f64 {
        p * self.purchase_probability(link, u, beta, p)
    }

    /// Expected regret of `p` against the optimal price.
    pub fn regret(&self, link: &LinkModel, u: f64, beta: f64, p: f64) -> Result<f64> {
        let best = self.optimal_price(link, u, beta)?;
        let gap =
            self.expected_reward(link, u, beta, best) - self.expected_reward(link, u, beta, p);
        Ok(gap.max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expansion {
    pub x0: Vec<f64>,
    pub a: Vec<i32>,
}

impl Expansion {
    pub fn output_dim(&self) -> usize {
        (self.a.len() + 1) * self.x0.len()
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        expand_context(x, &DVector::from_column_slice(&self.x0), &self.a)
    }
}

/// `[x; (x - x0)^a1; ...; (x - x0)^am]` with elementwise powers, scaled by
/// `1/sqrt(m + 1)` and then into the unit ball if still outside.
pub fn expand_context(x: &DVector<f64>, x0: &DVector<f64>, a: &[i32]) -> Result<DVector<f64>> {
    if x.len() != x0.len() {
        return Err(PricingError::InvalidArgument(format!(
            "expansion origin has dimension {}, context has {}",
            x0.len(),
            x.len()
        )));
    }
    if a.is_empty() {
        return Err(PricingError::InvalidArgument(
            "expansion index list must be nonempty".into(),
        ));
    }
    let d = x.len();
    let shifted = x - x0;
    if a.iter().any(|&k| k < 0) && shifted.iter().any(|&v| v == 0.0) {
        return Err(PricingError::Domain {
            what: "negative expansion power of a zero coordinate",
            value: 0.0,
        });
    }
    let mut out = DVector::zeros((a.len() + 1) * d);
    out.rows_mut(0, d).copy_from(x);
    for (block, &k) in a.iter().enumerate() {
        for i in 0..d {
            out[(block + 1) * d + i] = shifted[i].powi(k);
        }
    }
    out /= ((a.len() + 1) as f64).sqrt();
    let norm = out.norm();
    if norm > 1.0 {
        out /= norm;
    }
    Ok(out)
}

/// Full description of one simulated market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub d: usize,
    pub theta_star: DVector<f64>,
    pub eta_star: DVector<f64>,
    pub context_kind: ContextKind,
    pub demand_kind: DemandKind,
    pub sigma: f64,
    pub mu_x: DVector<f64>,
    pub cov_x: DMatrix<f64>,
    pub expansion: Option<Expansion>,
    pub seed: u64,
}

impl EnvSpec {
    /// Materializes ground truth and context covariance from `seed`.
    pub fn generate(
        d: usize,
        sigma: f64,
        c_beta: f64,
        context_kind: ContextKind,
        demand_kind: DemandKind,
        expansion: Option<Expansion>,
        seed: u64,
    ) -> Result<Self> {
        if context_kind == ContextKind::AdversarialTriangular && d != 2 {
            return Err(PricingError::InvalidArgument(format!(
                "the adversarial context sequence is defined for d = 2, got {d}"
            )));
        }
        if let Some(exp) = &expansion {
            if exp.x0.len() != d || exp.a.is_empty() {
                return Err(PricingError::InvalidArgument(format!(
                    "expansion needs x0 of dimension {d} and a nonempty index list"
                )));
            }
        }
        let (theta_star, eta_star) = gen_ground_truth(d, c_beta, seed)?;
        let cov_x = random_covariance(d, &mut stream_rng(seed, Stream::Covariance as u64));
        Ok(Self {
            d,
            theta_star,
            eta_star,
            context_kind,
            demand_kind,
            sigma,
            mu_x: DVector::from_element(d, CONTEXT_MEAN),
            cov_x,
            expansion,
            seed,
        })
    }

    pub fn link(&self) -> Result<LinkModel> {
        LinkModel::gaussian(self.sigma)
    }

    /// Dimension of the contexts the pricing policy sees.
    pub fn policy_dim(&self) -> usize {
        self.expansion
            .as_ref()
            .map_or(self.d, Expansion::output_dim)
    }

    /// Checks the stored spec: norms, positive-definite covariance, adversarial floor.
    pub fn validate(&self, c_beta: f64) -> Result<()> {
        let bad = |msg: String| Err(PricingError::InvalidArgument(msg));
        if self.theta_star.len() != self.d || self.eta_star.len() != self.d {
            return bad("ground truth dimension mismatch".into());
        }
        if self.theta_star.norm() > 1.0 || self.eta_star.norm() > 1.0 {
            return bad("ground truth must lie in the unit ball".into());
        }
        if self.cov_x.nrows() != self.d || self.cov_x.clone().cholesky().is_none() {
            return bad("context covariance must be symmetric positive definite".into());
        }
        if self.mu_x.len() != self.d {
            return bad("context mean dimension mismatch".into());
        }
        if self.context_kind == ContextKind::AdversarialTriangular
            && self.eta_star.iter().any(|&e| e < c_beta)
        {
            return bad("basis contexts must satisfy e_i' eta* >= c_beta".into());
        }
        Ok(())
    }

    /// The context at round `t` (1-based). Stochastic kinds draw from `rng`.
    pub fn context<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Result<DVector<f64>> {
        match self.context_kind {
            ContextKind::StochasticGaussian => Ok(self.stochastic_context(rng)),
            ContextKind::AdversarialTriangular => adversarial_context(self.d, t),
        }
    }

    /// `z ~ N(mu_x, Sigma_x)`, returned as `z / ||z||`.
    pub fn stochastic_context<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let chol = self
            .cov_x
            .clone()
            .cholesky()
            .expect("context covariance is positive definite");
        loop {
            let n = DVector::from_fn(self.d, |_, _| StandardNormal.sample(rng));
            let z = &self.mu_x + chol.l() * n;
            let norm = z.norm();
            if norm > 0.0 {
                return z / norm;
            }
        }
    }

    /// `(x'theta*, x'eta*)`.
    pub fn truth_indices(&self, x: &DVector<f64>) -> (f64, f64) {
        (x.dot(&self.theta_star), x.dot(&self.eta_star))
    }

    /// Purchase decision driven by pre-drawn noise, so several policies can share it.
    pub fn decide(
        &self,
        link: &LinkModel,
        x: &DVector<f64>,
        p: f64,
        noise: DemandNoise,
    ) -> Result<bool> {
        let (u, beta) = self.truth_indices(x);
        match self.demand_kind {
            DemandKind::Glm => Ok(noise.uniform < link.survival_unchecked(beta * p - u)),
            DemandKind::Valuation => {
                check_scale(beta)?;
                Ok(p <= (u + self.sigma * noise.normal) / beta)
            }
            DemandKind::MisspecifiedValuation => {
                check_scale(beta)?;
                Ok(p <= u + beta * self.sigma * noise.normal)
            }
        }
    }

    pub fn sample_demand<R: Rng + ?Sized>(
        &self,
        link: &LinkModel,
        x: &DVector<f64>,
        p: f64,
        rng: &mut R,
    ) -> Result<bool> {
        self.decide(link, x, p, DemandNoise::draw(rng))
    }
}

fn check_scale(beta: f64) -> Result<()> {
    if beta > 0.0 {
        Ok(())
    } else {
        Err(PricingError::Domain {
            what: "valuation scale x'eta*",
            value: beta,
        })
    }
}

/// Per-round demand randomness; both fields are always drawn to keep streams aligned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandNoise {
    pub uniform: f64,
    /// Standard normal; scaled by sigma at use.
    pub normal: f64,
}

impl DemandNoise {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            uniform: rng.random::<f64>(),
            normal: StandardNormal.sample(rng),
        }
    }
}

/// Entries uniform on `[0.3, 1]`, each vector scaled to norm 0.9, rejected until
/// every coordinate of `eta*` is at least `c_beta`.
pub fn gen_ground_truth(d: usize, c_beta: f64, seed: u64) -> Result<(DVector<f64>, DVector<f64>)> {
    if d == 0 {
        return Err(PricingError::InvalidArgument(
            "dimension must be >= 1".into(),
        ));
    }
    let mut rng = stream_rng(seed, Stream::GroundTruth as u64);
    let (lo, hi) = TRUTH_ENTRY_RANGE;
    let draw = |rng: &mut ChaCha8Rng| {
        let v = DVector::from_fn(d, |_, _| rng.random_range(lo..=hi));
        let n = v.norm();
        v * (TRUTH_NORM / n)
    };
    for _ in 0..GROUND_TRUTH_BUDGET {
        let theta = draw(&mut rng);
        let eta = draw(&mut rng);
        if eta.min() >= c_beta && theta.min() > 0.0 {
            return Ok((theta, eta));
        }
    }
    Err(PricingError::InvalidArgument(format!(
        "no ground truth with min eta* >= {c_beta} in {GROUND_TRUTH_BUDGET} draws (d = {d})"
    )))
}

/// `Q diag(lambda) Q'` with `Q` a random rotation and `lambda` uniform on `[0.5, 2]`.
pub fn random_covariance<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    let (lo, hi) = COV_EIGEN_RANGE;
    let lambda = DMatrix::from_diagonal(&DVector::from_fn(d, |_, _| rng.random_range(lo..=hi)));
    let cov: DMatrix<f64> = &q * lambda * q.transpose();
    (&cov + cov.transpose()) * 0.5
}

pub fn is_triangular(t: usize) -> bool {
    let k = (((8 * t + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (k.saturating_sub(1)..=k + 1).any(|k| k * (k + 1) / 2 == t)
}

/// `[1, 0]` on triangular rounds (RMLP-2's exploration rounds), `[0, 1]` otherwise.
pub fn adversarial_context(d: usize, t: usize) -> Result<DVector<f64>> {
    if d != 2 {
        return Err(PricingError::InvalidArgument(format!(
            "the adversarial context sequence is defined for d = 2, got {d}"
        )));
    }
    if t == 0 {
        return Err(PricingError::InvalidArgument("rounds are 1-based".into()));
    }
    Ok(if is_triangular(t) {
        DVector::from_vec(vec![1.0, 0.0])
    } else {
        DVector::from_vec(vec![0.0, 1.0])
    })
}
