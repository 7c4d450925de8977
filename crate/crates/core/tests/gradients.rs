//! Central finite differences against the tape for every differentiable loss
//! and for the full refiner objective, on 32x32 double-precision inputs.

#[path = "support/fd.rs"]
mod fd;

use fd::TOL;

#[test]
fn discriminator_adversarial_matches_differences() {
    let err = fd::discriminator_adversarial();
    assert!(err <= TOL, "{err}");
}

#[test]
fn generator_adversarial_matches_differences() {
    let err = fd::generator_adversarial();
    assert!(err <= TOL, "{err}");
}

#[test]
fn feature_matching_matches_differences() {
    let err = fd::feature_matching();
    assert!(err <= TOL, "{err}");
}

#[test]
fn pixelwise_matches_differences() {
    let err = fd::pixelwise();
    assert!(err <= TOL, "{err}");
}

#[test]
fn perceptual_matches_differences() {
    let err = fd::perceptual();
    assert!(err <= TOL, "{err}");
}

#[test]
fn style_classification_matches_differences() {
    let err = fd::style_classification();
    assert!(err <= TOL, "{err}");
}

#[test]
fn refiner_objective_matches_differences() {
    let (worst, checked) = fd::Refiner::new().check();
    assert!(checked >= 20, "{checked}");
    assert!(worst <= TOL, "worst relative error {worst:.2e}");
    eprintln!("refiner objective: {checked} elements, worst relative error {worst:.2e}");
}
