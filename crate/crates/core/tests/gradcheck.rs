mod common;

use common::*;

#[test]
fn every_layer_matches_finite_differences() {
    let errs = layer_gradient_errors();
    assert_eq!(errs.len(), 15);
    for (name, e) in errs {
        assert!(e < GRAD_TOL, "{name}: relative error {e:e}");
    }
}

#[test]
fn whole_tiny_model_matches_finite_differences() {
    for seed in SEEDS {
        let e = whole_model_gradient_error(seed);
        assert!(e < GRAD_TOL, "seed {seed}: relative error {e:e}");
    }
}
