mod common;

use common::grad_suite::*;
use common::rng;
use dcscan::tensor::{Tape, Tensor};

#[test]
fn unary_primitives() {
    assert_cases(&unary_cases());
}

#[test]
fn binary_primitives_with_broadcasting() {
    assert_cases(&binary_cases());
}

#[test]
fn broadcast_gradients_keep_input_shapes() {
    let mut r = rng(3);
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::uniform([4, 1, 3], -1.0, 1.0, &mut r));
    let b = tape.leaf(Tensor::uniform([2, 3], -1.0, 1.0, &mut r));
    let c = tape.leaf(Tensor::uniform([3], -1.0, 1.0, &mut r));
    let ab = tape.mul(a, b).unwrap();
    let abc = tape.add(ab, c).unwrap();
    let loss = tape.sum_all(abc).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(a).unwrap().shape(), &[4, 1, 3]);
    assert_eq!(g.get(b).unwrap().shape(), &[2, 3]);
    assert_eq!(g.get(c).unwrap().shape(), &[3]);
    // Each element of c is added to 4·2 outputs.
    assert!(g.get(c).unwrap().data().iter().all(|&v| (v - 8.0).abs() < 1e-15));
}

#[test]
fn reductions() {
    assert_cases(&reduction_cases());
}

#[test]
fn matrix_primitives() {
    assert_cases(&matrix_cases());
}

#[test]
fn layernorm_and_convolution() {
    assert_cases(&layernorm_conv_cases());
}

#[test]
fn indexing_and_layout_primitives() {
    assert_cases(&layout_cases());
}

#[test]
fn loss_primitives() {
    assert_cases(&loss_cases());
}

#[test]
fn vss_block_end_to_end() {
    assert_cases(&block_cases());
}

#[test]
fn projector_through_pool_and_perceptron() {
    assert_cases(&[projector_case()]);
}

#[test]
fn network_logits_sampled_parameters() {
    assert_cases(&[network_case()]);
}

#[test]
fn total_cotraining_loss_sampled_parameters() {
    let c = total_loss_case();
    println!("{c:?}");
    assert_cases(&[c]);
}
