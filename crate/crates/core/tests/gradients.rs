//! Analytic gradients against central finite differences, in f64.

mod common;

use common::gradcheck::{self, Checks};

fn run(f: fn(&mut Checks)) {
    let mut c = Checks::default();
    f(&mut c);
    assert!(c.failures().is_empty(), "{:?}", c.failures());
}

#[test]
fn conv2d_input_and_weights() {
    run(gradcheck::conv2d_input_and_weights);
}

#[test]
fn complex_conv_free_weights_and_input() {
    run(gradcheck::complex_conv_free_weights_and_input);
}

#[test]
fn crelu_paths() {
    run(gradcheck::crelu_paths);
}

#[test]
fn batch_norm_input_gamma_beta() {
    run(gradcheck::batch_norm_input_gamma_beta);
}

#[test]
fn fully_connected_paths() {
    run(gradcheck::fully_connected_paths);
}

#[test]
fn cross_entropy_logits() {
    run(gradcheck::cross_entropy_logits);
}

#[test]
fn max_pool_path() {
    run(gradcheck::max_pool_path);
}

#[test]
fn phase_extraction_path() {
    run(gradcheck::phase_extraction_path);
}

#[test]
fn regularizer_path() {
    run(gradcheck::regularizer_path);
}

#[test]
fn end_to_end_complex_front() {
    run(gradcheck::end_to_end_complex_front);
}

#[test]
fn end_to_end_plain_front() {
    run(gradcheck::end_to_end_plain_front);
}
