//! Finite-difference and closed-form checks of the derivative engine.

mod common;

#[test]
fn input_derivatives_match_finite_differences() {
    let worst = common::input_derivative_error(11, 20);
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn pinn_gradient_matches_finite_differences() {
    let worst = common::loss_gradient_error(12, 20);
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn jacobian_rows_match_finite_differences() {
    let worst = common::jacobian_error(13, 5);
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn single_unit_closed_forms() {
    let worst = common::single_unit_error(14, 50);
    assert!(worst <= 1e-12, "worst error {worst:e}");
}

#[test]
fn kernel_matches_finite_difference_gram() {
    let worst = common::kernel_gram_error();
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}
