//! Finite-difference checks of every differentiable layer at f64.

mod support;

use support::{gradient_cases, worst_gradient_error, GRAD_TOL};

#[test]
fn every_layer_matches_finite_differences() {
    for (name, make) in gradient_cases() {
        let (err, seed) = worst_gradient_error(make, 20).unwrap();
        assert!(err <= GRAD_TOL, "{name}: instance {seed} rel error {err:e}");
    }
}

#[test]
fn routing_oracles_hold_on_a_few_trials() {
    for seed in 0..50 {
        let t = support::routing_trial(seed).unwrap();
        assert!(t.normalization <= 1e-6 && t.permutation <= 1e-6, "{seed}: {t:?}");
        assert!(
            t.single_exact && t.collapse_mean <= 1e-9 && t.collapse_var <= 1e-12,
            "{seed}: {t:?}"
        );
    }
}

#[test]
fn vote_equivariance_on_a_few_trials() {
    for seed in 0..50 {
        assert!(support::vote_equivariance_error(seed).unwrap() <= 1e-6);
    }
}

#[test]
fn gelu_grid() {
    assert!(support::gelu_grid_error() <= 3e-3);
}
