//! Self-checks of the numerical building blocks against independent references.
//!
//! Every property draws from its own seeded stream, so a report is reproducible.
//! `Faults` deliberately corrupts one ingredient so callers can confirm that the
//! matching property actually fails.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::env::{stream_rng, ContextKind, DemandKind, DemandNoise, EnvSpec};
use crate::error::Result;
use crate::likelihood::{nll_grad, nll_hessian, nll_with_clamp, Observation, ParamPair};
use crate::link::{derive_constants, LinkModel, PricingConstants};
use crate::ons::{a_norm_project, OnsHyper, OnsState};
use crate::policies::PwpPolicy;

/// Wall-clock budget for the whole suite.
pub const TIME_BUDGET: Duration = Duration::from_secs(60);

const GRADIENT_POINTS: usize = 50;
const GRADIENT_TOL: f64 = 1e-5;
const WOODBURY_TOL: f64 = 1e-8;
const GRID_GAP_TOL: f64 = 1e-3;
const GRID_STEPS: usize = 2000;
const MOMENT_DRAWS: usize = 100_000;
const DEMAND_DRAWS: usize = 100_000;
const CHI_SQUARE_LEVEL: f64 = 0.01;
const ROUND_TRIP_TOL: f64 = 1e-9;
const CERTIFICATE_POINTS: usize = 200;
const CERTIFICATE_TOL: f64 = -1e-8;
const SCORE_DRAWS: usize = 100_000;
const SE_MULTIPLE: f64 = 3.0;

/// Deliberate corruptions for checking that the suite can fail.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    /// Scales the analytic gradient by `1 + 1e-3` before comparison.
    pub corrupt_gradient: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub properties: Vec<PropertyResult>,
    pub elapsed_secs: f64,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }

    pub fn get(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }
}

struct Setup {
    link: LinkModel,
    constants: PricingConstants,
}

/// Runs every property with `sigma = 0.5`, `c_beta = 0.3`, `d = 2`.
pub fn run_verify(seed: u64, faults: Faults) -> Result<VerifyReport> {
    let start = Instant::now();
    let link = LinkModel::gaussian(0.5)?;
    let constants = derive_constants(&link, 0.3, 2, 1 << 16)?;
    let setup = Setup { link, constants };

    type Check = fn(&Setup, &mut ChaCha8Rng, Faults) -> Result<PropertyResult>;
    let checks: [Check; 8] = [
        gradient_matches_differences,
        woodbury_matches_inverse,
        projection_matches_grid,
        perturbation_moments,
        demand_laws_agree,
        varphi_round_trip,
        curvature_certificates,
        score_is_centered,
    ];
    let mut properties = Vec::with_capacity(checks.len() + 1);
    for (i, check) in checks.iter().enumerate() {
        let mut rng = stream_rng(seed, 100 + i as u64);
        properties.push(check(&setup, &mut rng, faults)?);
    }
    let elapsed = start.elapsed();
    properties.push(PropertyResult {
        name: "runtime",
        passed: elapsed <= TIME_BUDGET,
        detail: format!(
            "{:.2}s of {}s",
            elapsed.as_secs_f64(),
            TIME_BUDGET.as_secs()
        ),
    });
    Ok(VerifyReport {
        seed,
        properties,
        elapsed_secs: elapsed.as_secs_f64(),
    })
}

fn unit_ball_point<R: Rng + ?Sized>(rng: &mut R, d: usize, radius: f64) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        if v.norm() <= 1.0 {
            return v * radius;
        }
    }
}

fn random_params<R: Rng + ?Sized>(rng: &mut R, d: usize) -> ParamPair {
    ParamPair::new(unit_ball_point(rng, d, 1.0), unit_ball_point(rng, d, 1.0))
        .expect("unit-ball draws are feasible")
}

fn gradient_matches_differences(
    s: &Setup,
    rng: &mut ChaCha8Rng,
    faults: Faults,
) -> Result<PropertyResult> {
    let h = 1e-6;
    let mut worst = 0.0_f64;
    let mut checked = 0;
    while checked < GRADIENT_POINTS {
        let params = random_params(rng, 2);
        let x = unit_ball_point(rng, 2, 1.0);
        let p = rng.random_range(s.constants.c1..=s.constants.c2);
        let obs = Observation::new(x, p, rng.random::<bool>());
        let z = params.stacked();
        let mut analytic = nll_grad(&s.link, &params, &obs);
        if faults.corrupt_gradient {
            analytic *= 1.0 + 1e-3;
        }
        let mut numeric = DVector::zeros(z.len());
        let mut clamped = false;
        for i in 0..z.len() {
            let mut loss_at = |delta: f64| {
                let mut zz = z.clone();
                zz[i] += delta;
                let (f, c) = nll_with_clamp(&s.link, &ParamPair::from_stacked(&zz)?, &obs);
                clamped |= c;
                Ok::<f64, crate::error::PricingError>(f)
            };
            numeric[i] = (loss_at(h)? - loss_at(-h)?) / (2.0 * h);
        }
        // The clamped loss is flat, so differences there say nothing about the score.
        if clamped || analytic.norm() < 1e-3 {
            continue;
        }
        worst = worst.max((&numeric - &analytic).norm() / analytic.norm());
        checked += 1;
    }
    Ok(PropertyResult {
        name: "gradient",
        passed: worst <= GRADIENT_TOL,
        detail: format!("max relative error {worst:.2e} over {GRADIENT_POINTS} points"),
    })
}

fn woodbury_matches_inverse(
    _s: &Setup,
    rng: &mut ChaCha8Rng,
    _faults: Faults,
) -> Result<PropertyResult> {
    let mut state = OnsState::new(OnsHyper::new(1.0, 0.5)?, ParamPair::uniform(2, 0.0))?;
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let g = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
        state.woodbury_update(&g)?;
        let direct = state
            .a_matrix
            .clone()
            .try_inverse()
            .expect("A is positive definite");
        worst = worst.max((&direct - &state.a_inverse).amax());
    }
    Ok(PropertyResult {
        name: "woodbury",
        passed: worst <= WOODBURY_TOL,
        detail: format!("max entry difference {worst:.2e} over 200 updates"),
    })
}

/// Two-dimensional case: the feasible set is the square `[-1, 1]^2`.
fn projection_matches_grid(
    _s: &Setup,
    rng: &mut ChaCha8Rng,
    _faults: Faults,
) -> Result<PropertyResult> {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10 {
        let l = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-2.0..2.0));
        let a = &l * l.transpose() + DMatrix::identity(2, 2) * 0.05;
        let y = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
        let quad = |u: f64, v: f64| {
            let (du, dv) = (u - y[0], v - y[1]);
            a[(0, 0)] * du * du + 2.0 * a[(0, 1)] * du * dv + a[(1, 1)] * dv * dv
        };
        let projected = a_norm_project(&a, &y)?;
        let z = projected.params.stacked();
        let ours = quad(z[0], z[1]);
        let mut best = f64::INFINITY;
        for i in 0..=GRID_STEPS {
            let u = -1.0 + 2.0 * i as f64 / GRID_STEPS as f64;
            for j in 0..=GRID_STEPS {
                let v = -1.0 + 2.0 * j as f64 / GRID_STEPS as f64;
                best = best.min(quad(u, v));
            }
        }
        worst = worst.max(ours - best);
    }
    Ok(PropertyResult {
        name: "projection",
        passed: worst <= GRID_GAP_TOL,
        detail: format!("max objective excess over grid {worst:.2e} on 10 metrics"),
    })
}

fn perturbation_moments(
    s: &Setup,
    rng: &mut ChaCha8Rng,
    _faults: Faults,
) -> Result<PropertyResult> {
    let start = ParamPair::from_slices(&[0.4, 0.3], &[0.5, 0.5])?;
    let policy_rng = stream_rng(rng.random(), 16);
    let mut policy = PwpPolicy::new(
        s.link,
        s.constants,
        OnsHyper::new(1.0, 1.0)?,
        start,
        policy_rng,
    )?;
    let x = DVector::from_vec(vec![0.6, 0.7]);
    let center = policy.greedy(&x)?;
    let delta = s.constants.delta;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..MOMENT_DRAWS {
        let (p, _) = policy.pwp_price(&x)?;
        sum += p;
        sum_sq += p * p;
    }
    let n = MOMENT_DRAWS as f64;
    let first_z = (sum / n - center).abs() / (delta / n.sqrt());
    let second_z =
        (sum_sq / n - (center * center + delta * delta)).abs() / (2.0 * center * delta / n.sqrt());
    Ok(PropertyResult {
        name: "perturbation-moments",
        passed: first_z <= SE_MULTIPLE && second_z <= SE_MULTIPLE,
        detail: format!("mean off by {first_z:.2} SE, second moment off by {second_z:.2} SE"),
    })
}

fn demand_laws_agree(s: &Setup, rng: &mut ChaCha8Rng, _faults: Faults) -> Result<PropertyResult> {
    let mut spec = EnvSpec::generate(
        2,
        s.link.sigma(),
        s.constants.c_beta,
        ContextKind::StochasticGaussian,
        DemandKind::Glm,
        None,
        rng.random(),
    )?;
    let x = DVector::from_vec(vec![0.7, 0.6]);
    let (u, beta) = spec.truth_indices(&x);
    let p = s.link.greedy_price(u, beta)?;
    let mut counts = [0_usize; 2];
    for (k, kind) in [DemandKind::Glm, DemandKind::Valuation]
        .into_iter()
        .enumerate()
    {
        spec.demand_kind = kind;
        for _ in 0..DEMAND_DRAWS {
            if spec.decide(&s.link, &x, p, DemandNoise::draw(rng))? {
                counts[k] += 1;
            }
        }
    }
    // Pearson statistic of the 2 x 2 table (law x outcome).
    let n = DEMAND_DRAWS as f64;
    let bought = (counts[0] + counts[1]) as f64;
    let expected_buy = bought / 2.0;
    let expected_not = n - expected_buy;
    let stat: f64 = counts
        .iter()
        .map(|&c| {
            let c = c as f64;
            (c - expected_buy).powi(2) / expected_buy
                + (n - c - expected_not).powi(2) / expected_not
        })
        .sum();
    let critical = ChiSquared::new(1.0)
        .expect("one degree of freedom")
        .inverse_cdf(1.0 - CHI_SQUARE_LEVEL);
    Ok(PropertyResult {
        name: "demand-equivalence",
        passed: stat <= critical,
        detail: format!(
            "chi-square {stat:.3} vs critical {critical:.3} (purchases {} / {})",
            counts[0], counts[1]
        ),
    })
}

fn varphi_round_trip(s: &Setup, _rng: &mut ChaCha8Rng, _faults: Faults) -> Result<PropertyResult> {
    let mut worst = 0.0_f64;
    let upper = s.constants.c2 / s.constants.c_beta;
    for i in 0..=1000 {
        let u = upper * i as f64 / 1000.0;
        let w = s.link.varphi_inv(u)?;
        worst = worst.max((s.link.varphi(w)? - u).abs());
    }
    Ok(PropertyResult {
        name: "varphi-round-trip",
        passed: worst <= ROUND_TRIP_TOL,
        detail: format!("max |varphi(varphi^-1(u)) - u| = {worst:.2e} on [0, {upper:.2}]"),
    })
}

/// Both certificates live on rank-one matrices, so each is checked through the
/// smallest eigenvalue of the assembled matrix rather than the scalar factor.
fn curvature_certificates(
    s: &Setup,
    rng: &mut ChaCha8Rng,
    _faults: Faults,
) -> Result<PropertyResult> {
    let k = &s.constants;
    let mut worst_exp = f64::INFINITY;
    let mut worst_curv = f64::INFINITY;
    let mut checked = 0;
    while checked < CERTIFICATE_POINTS {
        let params = random_params(rng, 2);
        let x = unit_ball_point(rng, 2, 1.0);
        let p = rng.random_range(k.c1..=k.c2);
        let obs = Observation::new(x, p, rng.random::<bool>());
        let w = crate::likelihood::linear_index(&params, &obs);
        if !(-1.0..=k.c2).contains(&w) {
            continue;
        }
        let h = nll_hessian(&s.link, &params, &obs);
        let g = nll_grad(&s.link, &params, &obs);
        let v = obs.design();
        let exp_cert = &h - &g * g.transpose() * k.c_e;
        let curv_cert = &h - &v * v.transpose() * k.c_l;
        worst_exp = worst_exp.min(exp_cert.symmetric_eigenvalues().min());
        worst_curv = worst_curv.min(curv_cert.symmetric_eigenvalues().min());
        checked += 1;
    }
    Ok(PropertyResult {
        name: "curvature-certificates",
        passed: worst_exp >= CERTIFICATE_TOL && worst_curv >= CERTIFICATE_TOL,
        detail: format!(
            "min eigenvalue {worst_exp:.2e} (exp-concavity), {worst_curv:.2e} (curvature floor)"
        ),
    })
}

fn score_is_centered(s: &Setup, rng: &mut ChaCha8Rng, _faults: Faults) -> Result<PropertyResult> {
    let truth = ParamPair::from_slices(&[0.5, 0.4], &[0.6, 0.5])?;
    let x = DVector::from_vec(vec![0.5, 0.6]);
    let p = s
        .link
        .greedy_price(x.dot(&truth.theta), x.dot(&truth.eta))?;
    let buy_prob = s
        .link
        .survival(x.dot(&truth.eta) * p - x.dot(&truth.theta))?;
    let dim = 2 * truth.dim();
    let mut sum = DVector::zeros(dim);
    let mut sum_sq = DVector::zeros(dim);
    for _ in 0..SCORE_DRAWS {
        let obs = Observation::new(x.clone(), p, rng.random::<f64>() < buy_prob);
        let g = nll_grad(&s.link, &truth, &obs);
        sum += &g;
        sum_sq += g.component_mul(&g);
    }
    let n = SCORE_DRAWS as f64;
    let mut worst = 0.0_f64;
    for i in 0..dim {
        let mean = sum[i] / n;
        let var = (sum_sq[i] / n - mean * mean).max(0.0);
        let se = (var / n).sqrt();
        if se > 0.0 {
            worst = worst.max(mean.abs() / se);
        }
    }
    Ok(PropertyResult {
        name: "score-centered",
        passed: worst <= SE_MULTIPLE,
        detail: format!("largest |mean score| is {worst:.2} SE over {SCORE_DRAWS} draws"),
    })
}
