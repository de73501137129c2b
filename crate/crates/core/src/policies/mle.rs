//! Maximum-likelihood fits over the unit-ball product by projected gradient descent.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PricingError, Result};
use crate::likelihood::{curvature_factor, nll_at_index, score_factor, Observation, ParamPair};
use crate::link::LinkModel;
use crate::ons::{a_norm_project, project_blocks};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MleModel {
    /// `P(buy) = S(x'eta p - x'theta)`; convex in `[theta; eta]`.
    GlmHeteroscedastic,
    /// Same link with `eta` pinned to the unit all-ones direction; only `theta` is fit.
    GlmHomoscedastic,
    /// `P(buy) = S((p - x'theta) / x'eta)`; non-convex.
    ValuationHeteroscedastic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleOptions {
    pub max_iter: usize,
    pub armijo: f64,
    pub grad_tol: f64,
    pub initial_step: f64,
    /// Random restarts in addition to the supplied start (non-convex model only).
    pub restarts: usize,
    /// Floor applied to `x'eta` inside the valuation likelihood.
    pub beta_floor: f64,
    /// Try a (shifted) Newton direction before the plain gradient each iteration.
    pub newton: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            armijo: 1e-4,
            grad_tol: 1e-8,
            initial_step: 1.0,
            restarts: 8,
            beta_floor: 0.3,
            newton: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    /// Backtracking could not find any decrease: the iterate is optimal to working precision.
    Stalled,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct MleFit {
    pub params: ParamPair,
    /// Cumulative negative log-likelihood at `params`.
    pub objective: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// Mean negative log-likelihood after every accepted step, starting from the initial point.
    pub trace: Vec<f64>,
}

/// The pinned elasticity direction used by the homoscedastic model.
pub fn homoscedastic_eta(d: usize) -> DVector<f64> {
    DVector::from_element(d, 1.0 / (d as f64).sqrt())
}

/// Accepted steps that lower the mean objective by less than this (relative) end the descent.
const STALL_RELATIVE: f64 = 1e-15;

/// Plateau rule: the descent also ends once the last `PLATEAU_WINDOW` accepted steps
/// together improved the mean loss by at most `PLATEAU_RELATIVE * max(1, |f|)`.
/// Nearly separable exploration data otherwise lets the loss creep toward its
/// infimum on the boundary for thousands of steps without changing the fit.
/// A Newton direction that needs a shorter step than this is abandoned for the gradient.
const NEWTON_MIN_STEP: f64 = 1e-3;
const GRADIENT_MIN_STEP: f64 = 1e-18;

const PLATEAU_WINDOW: usize = 100;
const PLATEAU_RELATIVE: f64 = 1e-12;

/// Bounds on the Newton ridge, relative to the largest Hessian entry. The floor keeps
/// few or collinear observations solvable.
const DAMPING_MIN: f64 = 1e-8;
const DAMPING_MAX: f64 = 1e2;

struct Problem<'a> {
    link: &'a LinkModel,
    history: &'a [Observation],
    model: MleModel,
    beta_floor: f64,
    d: usize,
}

impl Problem<'_> {
    fn to_params(&self, z: &DVector<f64>) -> ParamPair {
        match self.model {
            MleModel::GlmHomoscedastic => ParamPair {
                theta: z.clone(),
                eta: homoscedastic_eta(self.d),
            },
            _ => ParamPair::from_stacked(z).expect("even-length iterate"),
        }
    }

    fn encode_params(&self, params: &ParamPair) -> DVector<f64> {
        match self.model {
            MleModel::GlmHomoscedastic => params.theta.clone(),
            _ => params.stacked(),
        }
    }

    fn project(&self, z: &DVector<f64>) -> DVector<f64> {
        match self.model {
            MleModel::GlmHomoscedastic => {
                let n = z.norm();
                if n > 1.0 {
                    z / n
                } else {
                    z.clone()
                }
            }
            _ => project_blocks(z),
        }
    }

    /// Index `w` and `(dw/dtheta, dw/deta)` scale factors against `x`.
    fn index(&self, z: &DVector<f64>, obs: &Observation) -> (f64, f64, f64) {
        let d = self.d;
        let u: f64 = obs.x.iter().zip(z.iter().take(d)).map(|(a, b)| a * b).sum();
        match self.model {
            MleModel::GlmHeteroscedastic => {
                let beta: f64 = obs.x.iter().zip(z.iter().skip(d)).map(|(a, b)| a * b).sum();
                (beta * obs.p - u, -1.0, obs.p)
            }
            MleModel::GlmHomoscedastic => {
                let beta = obs.x.sum() / (d as f64).sqrt();
                (beta * obs.p - u, -1.0, 0.0)
            }
            MleModel::ValuationHeteroscedastic => {
                let raw: f64 = obs.x.iter().zip(z.iter().skip(d)).map(|(a, b)| a * b).sum();
                let beta = raw.max(self.beta_floor);
                let w = (obs.p - u) / beta;
                let deta = if raw > self.beta_floor {
                    -w / beta
                } else {
                    0.0
                };
                (w, -1.0 / beta, deta)
            }
        }
    }

    /// Mean negative log-likelihood.
    fn objective(&self, z: &DVector<f64>) -> f64 {
        let total: f64 = self
            .history
            .iter()
            .map(|obs| nll_at_index(self.link, self.index(z, obs).0, obs.bought).0)
            .sum();
        total / self.history.len() as f64
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let d = self.d;
        let mut g = DVector::zeros(z.len());
        for obs in self.history {
            let (w, dtheta, deta) = self.index(z, obs);
            let score = score_factor(self.link, w, obs.bought);
            for i in 0..d {
                g[i] += score * dtheta * obs.x[i];
                if z.len() > d {
                    g[d + i] += score * deta * obs.x[i];
                }
            }
        }
        g / self.history.len() as f64
    }

    /// `(M^{-1} g, M)` with `M = H + tau I` and `H` the exact Hessian of the mean loss.
    /// When `H` is indefinite (only the valuation model allows this) `tau` is first raised
    /// past the most negative eigenvalue, so `M` is always positive definite.
    fn damped_newton(
        &self,
        h: &DMatrix<f64>,
        g: &DVector<f64>,
        tau: f64,
    ) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let shifted = |tau: f64| {
            let mut m = h.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += tau;
            }
            m.clone().cholesky().map(|ch| (ch.solve(g), m))
        };
        shifted(tau).or_else(|| {
            let lowest = h
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            shifted(tau - lowest)
        })
    }

    /// Direction `z - z_new` for a backtracking search, where `z_new` is the damped Newton
    /// point projected onto the feasible set in the norm of the damped Hessian. Projecting
    /// in that norm rather than the Euclidean one keeps the step a Newton step when the
    /// fit sits on a ball boundary.
    fn scaled_newton(
        &self,
        z: &DVector<f64>,
        h: &DMatrix<f64>,
        g: &DVector<f64>,
        tau: f64,
    ) -> Result<Option<DVector<f64>>> {
        let Some((step, metric)) = self.damped_newton(h, g, tau) else {
            return Ok(None);
        };
        let target = z - &step;
        if self.model == MleModel::GlmHomoscedastic {
            // One ball: pair it with a decoupled identity block whose target is the origin.
            let d = self.d;
            let mut paired = DMatrix::<f64>::identity(2 * d, 2 * d);
            paired.view_mut((0, 0), (d, d)).copy_from(&metric);
            let mut point = DVector::<f64>::zeros(2 * d);
            point.rows_mut(0, d).copy_from(&target);
            let projected = a_norm_project(&paired, &point)?;
            return Ok(Some(z - &projected.params.theta));
        }
        let projected = a_norm_project(&metric, &target)?;
        Ok(Some(z - projected.params.stacked()))
    }

    fn hessian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let d = self.d;
        let n = z.len();
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut a = DVector::<f64>::zeros(n);
        for obs in self.history {
            let (w, dtheta, deta) = self.index(z, obs);
            let c = curvature_factor(self.link, w, obs.bought);
            for i in 0..d {
                a[i] = dtheta * obs.x[i];
                if n > d {
                    a[d + i] = deta * obs.x[i];
                }
            }
            h.ger(c, &a, &a, 1.0);
            if self.model == MleModel::ValuationHeteroscedastic && deta != 0.0 {
                // Second derivatives of w = (p - x'theta) / x'eta.
                let s = score_factor(self.link, w, obs.bought);
                let beta = -1.0 / dtheta;
                let cross = s / (beta * beta);
                let eta_eta = 2.0 * s * w / (beta * beta);
                for i in 0..d {
                    for j in 0..d {
                        let xx = obs.x[i] * obs.x[j];
                        h[(i, d + j)] += cross * xx;
                        h[(d + i, j)] += cross * xx;
                        h[(d + i, d + j)] += eta_eta * xx;
                    }
                }
            }
        }
        h / self.history.len() as f64
    }
}

/// Minimizes the cumulative negative log-likelihood of `history` over the unit-ball product.
///
/// The non-convex valuation model also tries `options.restarts` random starts and keeps
/// the best objective; the convex models run from `start` only.
pub fn mle_fit<R: Rng + ?Sized>(
    link: &LinkModel,
    history: &[Observation],
    model: MleModel,
    start: &ParamPair,
    options: &MleOptions,
    rng: &mut R,
) -> Result<MleFit> {
    if history.is_empty() {
        return Err(PricingError::InvalidArgument(
            "maximum likelihood needs at least one observation".into(),
        ));
    }
    let d = start.dim();
    if history.iter().any(|o| o.x.len() != d) {
        return Err(PricingError::InvalidArgument(
            "observation contexts do not match the parameter dimension".into(),
        ));
    }
    let problem = Problem {
        link,
        history,
        model,
        beta_floor: options.beta_floor,
        d,
    };

    let mut best = descend(
        &problem,
        problem.project(&problem.encode_params(start)),
        options,
    )?;
    if model == MleModel::ValuationHeteroscedastic {
        for _ in 0..options.restarts {
            let z0 = random_start(d, options.beta_floor, rng);
            let fit = descend(&problem, z0, options)?;
            if fit.objective < best.objective {
                best = fit;
            }
        }
    }
    Ok(best)
}

fn random_start<R: Rng + ?Sized>(d: usize, beta_floor: f64, rng: &mut R) -> DVector<f64> {
    let theta_radius = rng.random_range(0.0..1.0);
    let theta = random_direction(d, rng) * theta_radius;
    let eta_radius = rng.random_range(beta_floor.min(1.0)..=1.0);
    let eta = random_direction(d, rng) * eta_radius;
    let mut z = DVector::zeros(2 * d);
    z.rows_mut(0, d).copy_from(&theta);
    z.rows_mut(d, d).copy_from(&eta);
    z
}

/// A unit vector with non-negative entries.
fn random_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    let v = DVector::<f64>::from_fn(d, |_, _| rng.random_range(0.0..1.0));
    let n = v.norm().max(1e-12);
    v / n
}

/// Backtracking along `z - step * direction`, projected back onto the feasible set.
///
/// Returns the accepted iterate, its objective and the step, or `None` once the step
/// underflows.
fn line_search(
    problem: &Problem<'_>,
    z: &DVector<f64>,
    f: f64,
    g: &DVector<f64>,
    direction: &DVector<f64>,
    mut step: f64,
    min_step: f64,
    armijo: f64,
) -> Result<Option<(DVector<f64>, f64, f64)>> {
    while step > min_step {
        let candidate = problem.project(&(z - direction * step));
        let fc = problem.objective(&candidate);
        if !fc.is_finite() {
            return Err(PricingError::LineSearch {
                objective: fc,
                iterate: candidate.iter().copied().collect(),
            });
        }
        if fc <= f + armijo * g.dot(&(&candidate - z)) && fc <= f {
            return Ok(Some((candidate, fc, step)));
        }
        step *= 0.5;
    }
    Ok(None)
}

/// Levenberg-Marquardt style: the ridge, relative to the Hessian's scale, shrinks after
/// a full step is accepted and grows tenfold after every failed attempt.
fn newton_step(
    problem: &Problem<'_>,
    z: &DVector<f64>,
    f: f64,
    g: &DVector<f64>,
    damping: &mut f64,
    armijo: f64,
) -> Result<Option<(DVector<f64>, f64, f64)>> {
    let h = problem.hessian(z);
    let scale = 1.0 + h.amax();
    while *damping <= DAMPING_MAX {
        if let Some(dir) = problem.scaled_newton(z, &h, g, *damping * scale)? {
            if let Some(hit) = line_search(problem, z, f, g, &dir, 1.0, NEWTON_MIN_STEP, armijo)? {
                if hit.2 == 1.0 {
                    *damping = (*damping / 10.0).max(DAMPING_MIN);
                }
                return Ok(Some(hit));
            }
        }
        *damping *= 10.0;
    }
    *damping = DAMPING_MAX;
    Ok(None)
}

fn descend(problem: &Problem<'_>, mut z: DVector<f64>, options: &MleOptions) -> Result<MleFit> {
    let mut f = problem.objective(&z);
    if !f.is_finite() {
        return Err(PricingError::LineSearch {
            objective: f,
            iterate: z.iter().copied().collect(),
        });
    }
    let mut trace = vec![f];
    let mut stop = StopReason::IterationLimit;
    let mut iterations = 0;
    let mut last_step = options.initial_step;
    let mut use_newton = options.newton;
    let mut damping = DAMPING_MIN;
    while iterations < options.max_iter {
        let g = problem.gradient(&z);
        let mapping = (&z - problem.project(&(&z - &g))).norm();
        if mapping <= options.grad_tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        iterations += 1;
        let newton = if use_newton {
            newton_step(problem, &z, f, &g, &mut damping, options.armijo)?
        } else {
            None
        };
        let newton_taken = newton.is_some();
        let accepted = match newton {
            Some(hit) => Some(hit),
            None => {
                let first = (2.0 * last_step).min(options.initial_step);
                let hit = line_search(
                    problem,
                    &z,
                    f,
                    &g,
                    &g,
                    first,
                    GRADIENT_MIN_STEP,
                    options.armijo,
                )?;
                if let Some((_, _, step)) = hit {
                    last_step = step;
                }
                hit
            }
        };
        match accepted {
            Some((next, fc, _)) => {
                let gain = f - fc;
                z = next;
                f = fc;
                trace.push(f);
                if trace.len() > PLATEAU_WINDOW
                    && trace[trace.len() - 1 - PLATEAU_WINDOW] - f
                        <= PLATEAU_RELATIVE * f.abs().max(1.0)
                {
                    stop = StopReason::Stalled;
                    break;
                }
                if gain <= STALL_RELATIVE * f.abs().max(1.0) {
                    // A projected Newton step can crawl along the boundary; only a
                    // gradient step that cannot make progress ends the descent.
                    if !newton_taken {
                        stop = StopReason::Stalled;
                        break;
                    }
                    use_newton = false;
                } else {
                    use_newton = options.newton;
                }
            }
            None => {
                stop = StopReason::Stalled;
                break;
            }
        }
    }
    Ok(MleFit {
        params: problem.to_params(&z),
        objective: f * problem.history.len() as f64,
        iterations,
        stop,
        trace,
    })
}
