//! Module behavior checked against references computed independently of the crate.

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use pricing_lab::env::{adversarial_context, expand_context, is_triangular, DemandKind};
use pricing_lab::harness::{checkpoint_grid, loglog_slope, wald_band};
use pricing_lab::ons::{a_norm_project, project_blocks};
use pricing_lab::{derive_constants, LinkModel, OnsHyper, OnsState, ParamPair};
use statrs::distribution::{ContinuousCDF, Normal};

fn link() -> LinkModel {
    LinkModel::gaussian(0.5).unwrap()
}

/// Golden-section search for the maximum of a unimodal function.
fn argmax(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - r * (hi - lo);
        let b = lo + r * (hi - lo);
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn survival_matches_a_reference_normal() {
    let normal = Normal::new(0.0, 0.5).unwrap();
    for i in -40..=40 {
        let w = i as f64 * 0.1;
        let s = link().survival(w).unwrap();
        assert_relative_eq!(s, normal.sf(w), max_relative = 1e-10, epsilon = 1e-300);
        assert_relative_eq!(link().cdf(w).unwrap(), normal.cdf(w), max_relative = 1e-10);
    }
}

#[test]
fn greedy_price_maximizes_expected_revenue() {
    let l = link();
    for &(u, beta) in &[(0.0, 1.0), (0.3, 0.8), (1.0, 0.3), (0.7, 0.55)] {
        let best = argmax(|p| p * l.survival(beta * p - u).unwrap(), 0.0, 20.0);
        assert_relative_eq!(l.greedy_price(u, beta).unwrap(), best, epsilon = 1e-7);
    }
}

#[test]
fn valuation_optimal_price_maximizes_its_revenue() {
    let l = link();
    let kind = DemandKind::MisspecifiedValuation;
    for &(u, beta) in &[(0.2, 1.0), (0.6, 0.5), (0.9, 0.3)] {
        let best = argmax(|p| kind.expected_reward(&l, u, beta, p), 0.0, 20.0);
        assert_relative_eq!(
            kind.optimal_price(&l, u, beta).unwrap(),
            best,
            epsilon = 1e-7
        );
        assert!(kind.regret(&l, u, beta, best).unwrap() < 1e-12);
    }
}

#[test]
fn reference_constants() {
    let k = derive_constants(&link(), 0.3, 2, 1 << 16).unwrap();
    let j01 = argmax(|p| p * link().survival(p).unwrap(), 0.0, 5.0);
    assert_relative_eq!(k.j01, j01, epsilon = 1e-7);
    assert_relative_eq!(k.c1, j01 / 2.0, epsilon = 1e-7);
    let j = argmax(|p| p * link().survival(0.3 * p - 1.0).unwrap(), 0.0, 20.0);
    assert_relative_eq!(k.c2, 2.0 * j, epsilon = 1e-6);
    assert_relative_eq!(k.d_diam, 8f64.sqrt(), epsilon = 1e-15);
    assert_relative_eq!(k.delta, j01 / 10.0, epsilon = 1e-7);
}

#[test]
fn woodbury_inverse_matches_direct_inverse_in_higher_dimension() {
    let start = ParamPair::uniform(3, 0.2);
    let mut ons = OnsState::new(OnsHyper::new(2.0, 0.3).unwrap(), start).unwrap();
    for k in 0..300 {
        let g = DVector::from_fn(6, |i, _| ((k * 7 + i * 13) % 11) as f64 - 5.0);
        ons.woodbury_update(&g).unwrap();
    }
    let direct = ons.a_matrix.clone().try_inverse().unwrap();
    assert!((direct - &ons.a_inverse).amax() < 1e-10);
}

/// Plain projected gradient descent in the A-norm, run to a tight tolerance.
fn slow_projection(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let step = 1.0 / a.symmetric_eigenvalues().max();
    let mut z = project_blocks(y);
    for _ in 0..200_000 {
        let grad = a * (&z - y);
        z = project_blocks(&(&z - grad * step));
    }
    z
}

#[test]
fn a_norm_projection_matches_slow_reference() {
    let cases = [
        (
            vec![
                4.0, 1.0, 0.5, 0.2, 1.0, 3.0, 0.1, 0.4, 0.5, 0.1, 2.0, 0.3, 0.2, 0.4, 0.3, 1.0,
            ],
            vec![2.0, 1.5, -1.0, 0.5],
        ),
        (
            vec![
                1.0, 0.9, 0.0, 0.0, 0.9, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -0.8, 0.0, 0.0, -0.8, 1.0,
            ],
            vec![0.3, 3.0, 2.0, 2.0],
        ),
    ];
    for (entries, y) in cases {
        let a = DMatrix::from_row_slice(4, 4, &entries);
        let y = DVector::from_vec(y);
        let fast = a_norm_project(&a, &y).unwrap();
        assert!(fast.converged);
        let slow = slow_projection(&a, &y);
        let q = |z: &DVector<f64>| (z - &y).dot(&(&a * (z - &y)));
        assert!(q(&fast.params.stacked()) <= q(&slow) + 1e-9);
        assert!((fast.params.stacked() - slow).norm() < 1e-4);
    }
}

#[test]
fn expansion_matches_hand_computation() {
    let x = DVector::from_vec(vec![0.3, 0.8]);
    let x0 = DVector::from_vec(vec![0.5, 0.5]);
    let out = expand_context(&x, &x0, &[0, 1]).unwrap();
    let raw = [0.3, 0.8, 1.0, 1.0, -0.2, 0.3];
    let scaled: Vec<f64> = raw.iter().map(|v| v / 3f64.sqrt()).collect();
    let norm = scaled.iter().map(|v| v * v).sum::<f64>().sqrt();
    for (o, s) in out.iter().zip(&scaled) {
        assert_relative_eq!(*o, s / norm.max(1.0), epsilon = 1e-15);
    }
}

#[test]
fn adversarial_sequence_marks_triangular_rounds() {
    let triangular: Vec<usize> = (1..=60).filter(|&t| is_triangular(t)).collect();
    assert_eq!(triangular, vec![1, 3, 6, 10, 15, 21, 28, 36, 45, 55]);
    assert_eq!(adversarial_context(2, 10).unwrap().as_slice(), &[1.0, 0.0]);
    assert_eq!(adversarial_context(2, 11).unwrap().as_slice(), &[0.0, 1.0]);
    assert!(adversarial_context(3, 1).is_err());
}

#[test]
fn slope_and_band_on_known_data() {
    let grid = checkpoint_grid(1 << 12);
    let values: Vec<f64> = grid.iter().map(|&t| 3.0 * (t as f64).powf(0.5)).collect();
    let (slope, stderr) = loglog_slope(&grid, &values).unwrap();
    assert_relative_eq!(slope, 0.5, epsilon = 1e-12);
    assert!(stderr < 1e-10);

    let (mean, half) = wald_band(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
    assert_relative_eq!(mean[0], 2.5);
    let sd = (5.0f64 / 3.0).sqrt();
    assert_relative_eq!(half[0], 1.96 * sd / 2.0, epsilon = 1e-12);
}
