//! Randomized invariants of the numerical building blocks.

use nalgebra::{DMatrix, DVector};
use pricing_lab::config::Preset;
use pricing_lab::harness::{read_trial_csv, run_trial, write_trial_csv};
use pricing_lab::likelihood::{nll, nll_grad, Observation};
use pricing_lab::ons::{a_norm_project, project_blocks};
use pricing_lab::policies::PolicyKind;
use pricing_lab::{LinkModel, OnsHyper, OnsState, ParamPair};
use proptest::prelude::*;

fn link() -> LinkModel {
    LinkModel::gaussian(0.5).unwrap()
}

fn vec_strategy(n: usize, bound: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-bound..bound, n).prop_map(DVector::from_vec)
}

/// Symmetric positive definite `L L' + c I`.
fn spd_strategy(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-2.0..2.0f64, n * n), 0.01..1.0f64).prop_map(move |(v, c)| {
        let l = DMatrix::from_vec(n, n, v);
        &l * l.transpose() + DMatrix::identity(n, n) * c
    })
}

fn block_norms(v: &DVector<f64>) -> (f64, f64) {
    let d = v.len() / 2;
    (v.rows(0, d).norm(), v.rows(d, d).norm())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn varphi_inverse_round_trips(u in 0.0..20.0f64) {
        let w = link().varphi_inv(u).unwrap();
        prop_assert!((link().varphi(w).unwrap() - u).abs() <= 1e-9);
    }

    #[test]
    fn greedy_price_rises_with_index_and_falls_with_elasticity(
        u in 0.0..1.0f64, du in 0.01..0.5f64, beta in 0.3..0.9f64, db in 0.01..0.1f64
    ) {
        let l = link();
        let p = l.greedy_price(u, beta).unwrap();
        prop_assert!(l.greedy_price(u + du, beta).unwrap() > p);
        prop_assert!(l.greedy_price(u, beta + db).unwrap() < p);
    }

    #[test]
    fn block_projection_is_feasible_and_idempotent(v in vec_strategy(6, 3.0)) {
        let p = project_blocks(&v);
        let (a, b) = block_norms(&p);
        prop_assert!(a <= 1.0 + 1e-12 && b <= 1.0 + 1e-12);
        prop_assert!((project_blocks(&p) - &p).norm() < 1e-15);
    }

    #[test]
    fn a_norm_projection_beats_feasible_alternatives(
        a in spd_strategy(4), y in vec_strategy(4, 3.0), probe in vec_strategy(4, 1.0)
    ) {
        let out = a_norm_project(&a, &y).unwrap();
        let z = out.params.stacked();
        let (n1, n2) = block_norms(&z);
        prop_assert!(n1 <= 1.0 + 1e-9 && n2 <= 1.0 + 1e-9);
        let q = |v: &DVector<f64>| (v - &y).dot(&(&a * (v - &y)));
        let slack = 1e-8 * (1.0 + q(&z));
        prop_assert!(q(&z) <= q(&project_blocks(&y)) + slack);
        prop_assert!(q(&z) <= q(&project_blocks(&probe)) + slack);
        // Points already inside the set are left where they are.
        let inside = project_blocks(&y) * 0.9;
        let same = a_norm_project(&a, &inside).unwrap().params.stacked();
        prop_assert!((same - inside).norm() < 1e-8);
    }

    #[test]
    fn ons_metric_stays_consistent(grads in prop::collection::vec(vec_strategy(4, 5.0), 1..40)) {
        let mut ons = OnsState::new(OnsHyper::new(1.5, 0.7).unwrap(), ParamPair::uniform(2, 0.5)).unwrap();
        for g in &grads {
            ons.round(g).unwrap();
            prop_assert!(ons.params.is_feasible(1e-9));
        }
        let product = &ons.a_matrix * &ons.a_inverse;
        prop_assert!((product - DMatrix::identity(4, 4)).amax() < 1e-8);
    }

    #[test]
    fn loss_is_nonnegative_and_gradient_is_along_the_design(
        theta in vec_strategy(2, 0.7), eta in vec_strategy(2, 0.7),
        x in vec_strategy(2, 0.7), p in 0.19..5.5f64, bought: bool
    ) {
        let params = ParamPair::new(theta, eta).unwrap();
        let obs = Observation::new(x, p, bought);
        prop_assert!(nll(&link(), &params, &obs) >= 0.0);
        let g = nll_grad(&link(), &params, &obs);
        let v = obs.design();
        // g is a multiple of v: their 2x2 minors vanish.
        for i in 0..4 {
            for j in 0..4 {
                prop_assert!((g[i] * v[j] - g[j] * v[i]).abs() < 1e-9 * (1.0 + g.norm() * v.norm()));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn trials_replay_and_survive_a_csv_round_trip(seed in 0u64..1000) {
        let mut config = Preset::Stochastic.config();
        config.horizon = 512;
        let spec = config.env_spec().unwrap();
        let k = config.constants(&spec).unwrap();
        let settings = config.settings(false);
        let a = run_trial(&spec, PolicyKind::Pwp, &k, config.horizon, seed, &settings).unwrap();
        let b = run_trial(&spec, PolicyKind::Pwp, &k, config.horizon, seed, &settings).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.cum_regret.windows(2).all(|w| w[0] <= w[1]));

        let mut buf = Vec::new();
        write_trial_csv(&mut buf, &[&a], seed).unwrap();
        let rows = read_trial_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(rows.len(), a.checkpoints.len());
        for ((trial, t, v), (ct, cv)) in rows.iter().zip(a.checkpoints.iter().zip(&a.cum_regret)) {
            prop_assert_eq!(*trial, 0);
            prop_assert_eq!(t, ct);
            prop_assert_eq!(v.to_bits(), cv.to_bits());
        }
    }
}
