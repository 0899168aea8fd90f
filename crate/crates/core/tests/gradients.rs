//! Backward passes against central finite differences of the forward passes.

use slidenet_oracle::suite::{
    check_conv2d, check_cross_entropy, check_dropout, check_linear, check_maxpool, check_network, check_relu, GradientCheck,
};

const INSTANCES: u64 = 24;
const TOLERANCE: f64 = 1e-3;

fn assert_within(checks: Vec<GradientCheck>) {
    assert!(!checks.is_empty());
    for c in checks {
        assert_eq!(c.instances, INSTANCES as usize, "{}", c.op);
        assert!(c.worst <= TOLERANCE, "{}: worst relative error {:e}", c.op, c.worst);
    }
}

#[test]
fn conv2d_gradients() {
    assert_within(check_conv2d(INSTANCES));
}

#[test]
fn linear_gradients() {
    assert_within(check_linear(INSTANCES));
}

#[test]
fn relu_gradients() {
    assert_within(check_relu(INSTANCES));
}

#[test]
fn maxpool_gradients() {
    assert_within(check_maxpool(INSTANCES));
}

#[test]
fn dropout_gradients() {
    assert_within(check_dropout(INSTANCES));
}

#[test]
fn softmax_cross_entropy_gradients() {
    assert_within(check_cross_entropy(INSTANCES));
}

#[test]
fn network_gradients() {
    assert_within(check_network(INSTANCES));
}
