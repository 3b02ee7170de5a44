mod common;

use common::{assert_all, full_model_check, gradient_checks, report};
use igdehaze::Variant;

#[test]
fn every_block_matches_finite_differences() {
    let checks = gradient_checks();
    report(&checks);
    assert_all(&checks);
}

#[test]
fn full_model_gradients_for_base_and_fa_only() {
    let checks = vec![full_model_check(Variant::Base), full_model_check(Variant::BaseFaCpa)];
    report(&checks);
    assert_all(&checks);
}
