//! Analytic ELBO gradients against central finite differences.

mod common;

use common::worst_relative_error;

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..10 {
        let err = worst_relative_error(seed, false);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn gradients_match_with_unit_prior_expert() {
    for seed in 100..103 {
        let err = worst_relative_error(seed, true);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}
