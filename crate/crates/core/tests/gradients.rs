mod common;

use common::{control_fd_error, engine_fd_error, four_input_two_layer, small_families};
use sparsecascade::engine::Loss;

#[test]
fn engine_l2_gradient_matches_central_differences() {
    for t in small_families() {
        let err = engine_fd_error(&t, Loss::L2, 3);
        assert!(err < 1e-5, "{}: relative error {err}", t.name());
    }
}

#[test]
fn engine_l1_gradient_matches_central_differences() {
    for t in small_families() {
        let err = engine_fd_error(&t, Loss::L1, 4);
        assert!(err < 1e-5, "{}: relative error {err}", t.name());
    }
}

#[test]
fn control_gradient_on_four_input_two_layer_graph() {
    let t = four_input_two_layer();
    for seed in 0..3 {
        let err = control_fd_error(&t, seed, usize::MAX);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn control_gradient_on_every_family() {
    for t in small_families() {
        let err = control_fd_error(&t, 9, 300);
        assert!(err < 1e-4, "{}: relative error {err}", t.name());
    }
}
