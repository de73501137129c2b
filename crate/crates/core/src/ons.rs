//! Online Newton Step over the product of two Euclidean unit balls.
//!
//! Each round adds `g g'` to the information matrix `A`, keeps `A^-1` in sync with
//! the Woodbury identity, takes the step `z - A^-1 g / gamma` and projects back
//! onto `{||theta|| <= 1} x {||eta|| <= 1}` in the norm induced by `A`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, PricingError, Result};
use crate::likelihood::ParamPair;
use crate::link::PricingConstants;

const PROJECTION_TOL: f64 = 1e-10;
const PROJECTION_MAX_STEPS: usize = 10_000;
/// How often the maintained inverse is checked against `A`.
const RESYNC_PERIOD: usize = 1024;
const RESYNC_TOL: f64 = 1e-6;

/// Step size `1/gamma` and initial regularizer `A_0 = epsilon I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnsHyper {
    pub gamma: f64,
    pub epsilon: f64,
}

impl OnsHyper {
    /// `gamma = min{1/(4 G D), c_e} / 2`, `epsilon = 1/(gamma D)^2`.
    pub fn from_constants(constants: &PricingConstants) -> Result<Self> {
        let gd = constants.g_bound * constants.d_diam;
        let gamma = 0.5 * (1.0 / (4.0 * gd)).min(constants.c_e);
        let epsilon = 1.0 / (gamma * gamma * constants.d_diam * constants.d_diam);
        Self::new(gamma, epsilon)
    }

    pub fn new(gamma: f64, epsilon: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0 && epsilon.is_finite() && epsilon > 0.0) {
            return Err(PricingError::InvalidArgument(format!(
                "ONS needs positive finite gamma and epsilon, got gamma={gamma}, epsilon={epsilon}"
            )));
        }
        Ok(Self { gamma, epsilon })
    }
}

#[derive(Debug, Clone)]
pub struct OnsState {
    pub params: ParamPair,
    pub a_matrix: DMatrix<f64>,
    pub a_inverse: DMatrix<f64>,
    pub gamma: f64,
    pub epsilon: f64,
    pub step_count: usize,
    pub resyncs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOutcome {
    pub params: ParamPair,
    pub iterations: usize,
    /// Last iterate movement; below the tolerance on convergence.
    pub residual: f64,
    pub converged: bool,
}

/// What happened in one ONS round, for diagnostics and tracing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundReport {
    pub step_count: usize,
    pub grad_norm: f64,
    pub projection_iterations: usize,
    pub projection_residual: f64,
    pub projection_converged: bool,
}

/// ONS with the theoretical step size and regularizer.
pub fn ons_init(constants: &PricingConstants, start: ParamPair) -> Result<OnsState> {
    OnsState::new(OnsHyper::from_constants(constants)?, start)
}

impl OnsState {
    pub fn new(hyper: OnsHyper, start: ParamPair) -> Result<Self> {
        if !start.is_feasible(1e-12) {
            return Err(PricingError::InvalidArgument(
                "ONS start point must lie in the unit-ball product".into(),
            ));
        }
        let n = 2 * start.dim();
        Ok(Self {
            params: start,
            a_matrix: DMatrix::identity(n, n) * hyper.epsilon,
            a_inverse: DMatrix::identity(n, n) / hyper.epsilon,
            gamma: hyper.gamma,
            epsilon: hyper.epsilon,
            step_count: 0,
            resyncs: 0,
        })
    }

    pub fn hyper(&self) -> OnsHyper {
        OnsHyper {
            gamma: self.gamma,
            epsilon: self.epsilon,
        }
    }

    fn check_grad(&self, grad: &DVector<f64>) -> Result<()> {
        if grad.len() != self.a_matrix.nrows() {
            return Err(PricingError::InvalidArgument(format!(
                "gradient has dimension {}, expected {}",
                grad.len(),
                self.a_matrix.nrows()
            )));
        }
        for &g in grad.iter() {
            ensure_finite("gradient entry", g)?;
        }
        Ok(())
    }

    /// `A += g g'` with the inverse updated in `O(d^2)`.
    pub fn woodbury_update(&mut self, grad: &DVector<f64>) -> Result<()> {
        self.check_grad(grad)?;
        let a_inv_g = &self.a_inverse * grad;
        let denom = 1.0 + grad.dot(&a_inv_g);
        assert!(denom > 0.0, "Woodbury denominator {denom} must be positive");
        self.a_matrix.ger(1.0, grad, grad, 1.0);
        self.a_inverse.ger(-1.0 / denom, &a_inv_g, &a_inv_g, 1.0);
        Ok(())
    }

    /// Unprojected iterate `[theta; eta] - A^-1 g / gamma`.
    pub fn newton_step(&self, grad: &DVector<f64>) -> DVector<f64> {
        self.params.stacked() - (&self.a_inverse * grad) / self.gamma
    }

    /// Largest absolute entry of `A A^-1 - I`.
    pub fn inverse_drift(&self) -> f64 {
        let n = self.a_matrix.nrows();
        (&self.a_matrix * &self.a_inverse - DMatrix::<f64>::identity(n, n)).amax()
    }

    /// Recompute `A^-1` from scratch.
    pub fn resync_inverse(&mut self) -> Result<()> {
        let chol = self
            .a_matrix
            .clone()
            .cholesky()
            .ok_or(PricingError::Domain {
                what: "ONS information matrix (not positive definite)",
                value: self.a_matrix.amin(),
            })?;
        self.a_inverse = chol.inverse();
        self.resyncs += 1;
        Ok(())
    }

    /// Projection onto the feasible set in the `A` norm.
    pub fn a_norm_project(&self, point: &DVector<f64>) -> Result<ProjectionOutcome> {
        a_norm_project(&self.a_matrix, point)
    }

    /// Full round: rank-one update, Newton step, projection.
    pub fn round(&mut self, grad: &DVector<f64>) -> Result<RoundReport> {
        self.woodbury_update(grad)?;
        self.step_count += 1;
        if self.step_count.is_multiple_of(RESYNC_PERIOD) && self.inverse_drift() > RESYNC_TOL {
            self.resync_inverse()?;
        }
        let target = self.newton_step(grad);
        let outcome = self.a_norm_project(&target)?;
        self.params = outcome.params;
        Ok(RoundReport {
            step_count: self.step_count,
            grad_norm: grad.norm(),
            projection_iterations: outcome.iterations,
            projection_residual: outcome.residual,
            projection_converged: outcome.converged,
        })
    }

    /// Smallest eigenvalue of `A`; used by tracing only.
    pub fn min_eigenvalue(&self) -> f64 {
        self.a_matrix
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Euclidean projection of each half of `v` onto the unit ball.
pub fn project_blocks(v: &DVector<f64>) -> DVector<f64> {
    let d = v.len() / 2;
    let mut out = v.clone();
    for block in 0..2 {
        let mut seg = out.rows_mut(block * d, d);
        let norm = seg.norm();
        if norm > 1.0 {
            seg /= norm;
        }
    }
    out
}

fn in_blocks(v: &DVector<f64>) -> bool {
    let d = v.len() / 2;
    v.rows(0, d).norm() <= 1.0 && v.rows(d, d).norm() <= 1.0
}

/// `argmin_{z in K} (z - y)' A (z - y)` through its two ball multipliers.
///
/// Stationarity gives `z(mu) = (A + diag(mu_1 I, mu_2 I))^-1 A y`. The dual is concave,
/// so `||z_i||` falls as `mu_i` grows: the inner search solves for `mu_1` given `mu_2`,
/// the outer one for `mu_2`, each by safeguarded regula falsi on a monotone function.
pub fn a_norm_project(a: &DMatrix<f64>, point: &DVector<f64>) -> Result<ProjectionOutcome> {
    if !point.len().is_multiple_of(2) || point.len() != a.nrows() {
        return Err(PricingError::InvalidArgument(format!(
            "projection point of length {} does not match a {}x{} metric",
            point.len(),
            a.nrows(),
            a.ncols()
        )));
    }
    for &x in point.iter() {
        ensure_finite("projection point entry", x)?;
    }
    if in_blocks(point) {
        return Ok(ProjectionOutcome {
            params: ParamPair::from_stacked(point)?,
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }

    let dual = BallDual::new(a, point);
    let mut evaluations = 0;
    let inner = |mu2: f64, evaluations: &mut usize| -> f64 {
        let excess = |mu1: f64, evaluations: &mut usize| {
            *evaluations += 1;
            dual.block_norms(mu1, mu2).0 - 1.0
        };
        decreasing_root(|mu1| excess(mu1, evaluations))
    };
    let mu2 = decreasing_root(|mu2| {
        let mu1 = inner(mu2, &mut evaluations);
        evaluations += 1;
        dual.block_norms(mu1, mu2).1 - 1.0
    });
    let mu1 = inner(mu2, &mut evaluations);
    let z = dual.solve(mu1, mu2);
    let d = z.len() / 2;
    let norms = [z.rows(0, d).norm(), z.rows(d, d).norm()];
    // Complementary slackness and primal feasibility, whichever is violated more.
    let residual = [mu1, mu2]
        .iter()
        .zip(norms)
        .map(|(&mu, n)| {
            if mu > 0.0 {
                (n - 1.0).abs()
            } else {
                (n - 1.0).max(0.0)
            }
        })
        .fold(0.0, f64::max);
    Ok(ProjectionOutcome {
        // Rounding can leave a block a few ulps outside the ball.
        params: ParamPair::from_stacked(&project_blocks(&z))?,
        iterations: evaluations,
        residual,
        converged: residual <= PROJECTION_TOL,
    })
}

struct BallDual<'a> {
    a: &'a DMatrix<f64>,
    rhs: DVector<f64>,
}

impl<'a> BallDual<'a> {
    fn new(a: &'a DMatrix<f64>, point: &DVector<f64>) -> Self {
        Self { a, rhs: a * point }
    }

    fn solve(&self, mu1: f64, mu2: f64) -> DVector<f64> {
        let n = self.a.nrows();
        let d = n / 2;
        let mut m = self.a.clone();
        for i in 0..n {
            m[(i, i)] += if i < d { mu1 } else { mu2 };
        }
        match m.clone().cholesky() {
            Some(ch) => ch.solve(&self.rhs),
            None => m.lu().solve(&self.rhs).unwrap_or_else(|| DVector::zeros(n)),
        }
    }

    fn block_norms(&self, mu1: f64, mu2: f64) -> (f64, f64) {
        let z = self.solve(mu1, mu2);
        let d = z.len() / 2;
        (z.rows(0, d).norm(), z.rows(d, d).norm())
    }
}

/// Smallest `mu >= 0` with `h(mu) <= 0` for a nonincreasing `h` that becomes negative.
/// Returns 0 when `h(0) <= 0`, otherwise a root of `h`.
fn decreasing_root<F: FnMut(f64) -> f64>(mut h: F) -> f64 {
    let h0 = h(0.0);
    if h0 <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut h_lo) = (0.0, h0);
    let mut hi = 1.0;
    let mut h_hi = h(hi);
    while h_hi > 0.0 {
        lo = hi;
        h_lo = h_hi;
        hi *= 4.0;
        h_hi = h(hi);
        if !hi.is_finite() {
            return lo;
        }
    }
    // Illinois variant of regula falsi: halves the weight of a stale endpoint.
    let mut side = 0;
    for _ in 0..PROJECTION_MAX_STEPS {
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let mut mid = (lo * h_hi - hi * h_lo) / (h_hi - h_lo);
        if !(mid > lo && mid < hi) {
            mid = 0.5 * (lo + hi);
        }
        let hm = h(mid);
        if hm.abs() <= PROJECTION_TOL * 1e-2 {
            return mid;
        }
        if hm > 0.0 {
            lo = mid;
            h_lo = hm;
            if side == 1 {
                h_hi *= 0.5;
            }
            side = 1;
        } else {
            hi = mid;
            h_hi = hm;
            if side == -1 {
                h_lo *= 0.5;
            }
            side = -1;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::{derive_constants, LinkModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hyper() -> OnsHyper {
        OnsHyper::new(0.5, 1.0).unwrap()
    }

    /// Gauss-Jordan inverse, independent of nalgebra's decompositions.
    fn gauss_jordan_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let mut m = vec![vec![0.0; 2 * n]; n];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = a[(i, j)];
            }
            m[i][n + i] = 1.0;
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&r1, &r2| m[r1][col].abs().total_cmp(&m[r2][col].abs()))
                .unwrap();
            m.swap(col, pivot);
            let scale = m[col][col];
            for v in m[col].iter_mut() {
                *v /= scale;
            }
            for row in 0..n {
                if row != col {
                    let factor = m[row][col];
                    let pivot_row = m[col].clone();
                    for (v, p) in m[row].iter_mut().zip(pivot_row) {
                        *v -= factor * p;
                    }
                }
            }
        }
        DMatrix::from_fn(n, n, |i, j| m[i][n + j])
    }

    #[test]
    fn theory_hyperparameters() {
        let link = LinkModel::gaussian(0.5).unwrap();
        let k = derive_constants(&link, 0.3, 2, 1 << 16).unwrap();
        let state = ons_init(&k, ParamPair::uniform(2, 0.5)).unwrap();
        let gamma = 0.5 * f64::min(1.0 / (4.0 * k.g_bound * k.d_diam), k.c_e);
        let eps = 1.0 / (gamma * gamma * k.d_diam * k.d_diam);
        assert_eq!(state.gamma, gamma);
        assert_eq!(state.epsilon, eps);
        assert!(state.gamma <= k.c_e / 2.0);
        assert_eq!(state.inverse_drift(), 0.0);
    }

    #[test]
    fn rejects_infeasible_start_and_bad_hyper() {
        let bad = ParamPair::from_slices(&[1.5, 0.0], &[0.0, 0.0]).unwrap();
        assert!(OnsState::new(hyper(), bad).is_err());
        assert!(OnsHyper::new(0.0, 1.0).is_err());
        assert!(OnsHyper::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn woodbury_matches_direct_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut state = OnsState::new(hyper(), ParamPair::uniform(2, 0.5)).unwrap();
        for _ in 0..20 {
            let g = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            state.woodbury_update(&g).unwrap();
            let direct = gauss_jordan_inverse(&state.a_matrix);
            assert!((&state.a_inverse - direct).amax() <= 1e-8);
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut state = OnsState::new(hyper(), ParamPair::uniform(2, 0.5)).unwrap();
        let before = state.clone();
        let zero = DVector::zeros(4);
        state.woodbury_update(&zero).unwrap();
        assert_eq!(state.a_matrix, before.a_matrix);
        assert_eq!(state.a_inverse, before.a_inverse);
        assert_eq!(state.newton_step(&zero), before.params.stacked());
        state.round(&zero).unwrap();
        assert_eq!(state.params, before.params);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn updates_commute_in_a() {
        let g1 = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
        let g2 = DVector::from_vec(vec![-0.7, 0.2, 0.1, 1.5]);
        let mut a = OnsState::new(hyper(), ParamPair::uniform(2, 0.5)).unwrap();
        let mut b = a.clone();
        a.woodbury_update(&g1).unwrap();
        a.woodbury_update(&g2).unwrap();
        b.woodbury_update(&g2).unwrap();
        b.woodbury_update(&g1).unwrap();
        assert!((&a.a_matrix - &b.a_matrix).amax() <= 1e-15);
        assert!((&a.a_inverse - &b.a_inverse).amax() <= 1e-8);
    }

    #[test]
    fn newton_step_scaling_and_reference() {
        let mut state =
            OnsState::new(OnsHyper::new(1.0, 2.0).unwrap(), ParamPair::uniform(2, 0.5)).unwrap();
        let g = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        state.woodbury_update(&g).unwrap();
        // A = diag(3, 2, 2, 2), so A^-1 g = [1/3, 0, 0, 0].
        let start = state.params.stacked();
        let step = state.newton_step(&g);
        assert!((step[0] - (start[0] - 1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(step[1], start[1]);

        let mut doubled = state.clone();
        doubled.gamma *= 2.0;
        let d1 = step - &start;
        let d2 = doubled.newton_step(&g) - &start;
        assert!((d1 * 0.5 - d2).amax() < 1e-15);
    }

    #[test]
    fn identity_metric_is_blockwise_euclidean() {
        let a = DMatrix::identity(4, 4);
        let y = DVector::from_vec(vec![3.0, 4.0, 0.1, 0.2]);
        let out = a_norm_project(&a, &y).unwrap();
        assert!(out.converged);
        assert!((out.params.theta[0] - 0.6).abs() < 1e-9);
        assert!((out.params.theta[1] - 0.8).abs() < 1e-9);
        assert_eq!(out.params.eta.as_slice(), &[0.1, 0.2]);
    }

    #[test]
    fn interior_points_are_untouched() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 1.0, 2.0, 9.0]));
        let y = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.4]);
        let out = a_norm_project(&a, &y).unwrap();
        assert_eq!(out.params.stacked(), y);
        assert_eq!(out.iterations, 0);
    }

    fn objective(a: &DMatrix<f64>, z: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let diff = z - y;
        diff.dot(&(a * &diff))
    }

    #[test]
    fn coupled_metric_matches_grid_search() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.2, 1.2, 0.8]);
        let y = DVector::from_vec(vec![1.7, -2.4]);
        let out = a_norm_project(&a, &y).unwrap();
        assert!(out.converged, "{out:?}");
        let ours = objective(&a, &out.params.stacked(), &y);
        let n = 2000;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            let u = -1.0 + 2.0 * i as f64 / n as f64 - y[0];
            for j in 0..=n {
                let v = -1.0 + 2.0 * j as f64 / n as f64 - y[1];
                best = best.min(a[(0, 0)] * u * u + 2.0 * a[(0, 1)] * u * v + a[(1, 1)] * v * v);
            }
        }
        assert!(ours <= best + 1e-9, "{ours} vs grid {best}");
        assert!(best - ours < 1e-3);
    }

    #[test]
    fn ill_conditioned_metric_beats_feasible_samples_and_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 12;
        let mut a = DMatrix::identity(n, n) * 1e-3;
        for _ in 0..40 {
            let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            a.ger(1.0, &g, &g, 1.0);
        }
        let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let out = a_norm_project(&a, &y).unwrap();
        assert!(out.converged, "{out:?}");
        let z = out.params.stacked();
        assert!(out.params.is_feasible(1e-12));
        let ours = objective(&a, &z, &y);
        for _ in 0..20_000 {
            let sample =
                project_blocks(&(&z + DVector::from_fn(n, |_, _| rng.random_range(-0.05..0.05))));
            assert!(ours <= objective(&a, &sample, &y) + 1e-9);
        }
        // A(y - z) must be a nonnegative multiple of z on each active block and vanish elsewhere.
        let pull = &a * (&y - &z);
        let d = n / 2;
        for block in 0..2 {
            let zb = z.rows(block * d, d);
            let pb = pull.rows(block * d, d);
            if zb.norm() < 1.0 - 1e-9 {
                assert!(pb.norm() < 1e-6 * (1.0 + pull.norm()));
            } else {
                let mu = pb.dot(&zb);
                assert!(mu >= -1e-9);
                assert!(
                    (pb - zb * mu).norm() < 1e-6 * (1.0 + pull.norm()),
                    "block {block}"
                );
            }
        }
    }

    #[test]
    fn resync_restores_inverse() {
        let mut state = OnsState::new(hyper(), ParamPair::uniform(2, 0.5)).unwrap();
        state.a_inverse[(0, 1)] += 1e-3;
        assert!(state.inverse_drift() > 1e-4);
        state.resync_inverse().unwrap();
        assert!(state.inverse_drift() < 1e-12);
    }
}
