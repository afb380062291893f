mod common;

use common::grads;

#[test]
fn every_op_matches_central_differences() {
    for seed in 0..3 {
        for (name, err) in grads::worst_op_error(seed) {
            assert!(err <= grads::TOL, "{name} (seed {seed}): relative error {err:.3e}");
        }
    }
}

#[test]
fn full_dgcn_parameters_and_inputs() {
    for (n, seed) in [(6, 2)] {
        let c = grads::full_dgcn_check(n, seed);
        assert!(c.forward_gap <= 1e-12, "n={n}: forward gap {:.3e}", c.forward_gap);
        assert!(c.kinked * 100 < c.checked, "n={n}: {} of {} coordinates straddle a kink", c.kinked, c.checked);
        assert!(c.worst <= grads::TOL, "n={n}: relative error {:.3e}", c.worst);
    }
}

#[test]
fn optimizer_input_gradient() {
    for (n, seed) in [(3, 0), (5, 1), (8, 2)] {
        let err = grads::input_gradient_error(n, seed);
        assert!(err <= grads::TOL, "n={n}: relative error {err:.3e}");
    }
}
