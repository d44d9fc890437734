//! Central finite differences against the reverse sweep, in f64.

#[path = "support/gradcheck.rs"]
mod support;

use etiobench_core::nn::{Graph, Tensor};
use support::*;

#[test]
fn conv_layer_matches() {
    let err = support::conv_layer();
    assert!(err < TOL, "conv {err}");
}

#[test]
fn lateral_conv_layer_matches() {
    let err = support::lateral_conv_layer();
    assert!(err < TOL, "lateral {err}");
}

#[test]
fn relu_layer_matches() {
    let err = support::relu_layer();
    assert!(err < TOL, "relu {err}");
}

#[test]
fn pooling_and_slicing_matches() {
    let err = support::pooling_and_slicing();
    assert!(err < TOL, "slice+pool {err}");
}

#[test]
fn lateral_concatenation_matches() {
    let err = support::lateral_concatenation();
    assert!(err < TOL, "concat {err}");
}

#[test]
fn dense_softmax_and_cross_entropy_matches() {
    let err = support::dense_softmax_and_cross_entropy();
    assert!(err < TOL, "linear {err}");
}

#[test]
fn triplet_term_matches() {
    let err = support::triplet_term();
    assert!(err < TOL, "triplet {err}");
}

#[test]
fn whole_model_every_parameter() {
    let (err, name) = whole_model();
    assert!(err < TOL, "worst relative error {err} in {name}");
}

#[test]
fn frozen_parameter_gets_zero_gradient() {
    let (mut net, input, triplets) = model_fixture();
    net.params_mut().freeze("slow2.weight").unwrap();
    let (g, loss) = model_loss(&net, &input, &triplets, 1.0);
    net.params_mut().accumulate(&g.backward(loss).unwrap());
    let id = net.params().id_of("slow2.weight").unwrap();
    assert!(net.params().get(id).tensor.grad().is_none_or(|g| g.iter().all(|&v| v == 0.0)));
    let other = net.params().id_of("slow1.weight").unwrap();
    assert!(net.params().get(other).tensor.grad().unwrap().iter().any(|&v| v != 0.0));
}

#[test]
fn doubled_loss_doubles_gradients() {
    let (net, input, triplets) = model_fixture();
    let grads = |scale: f64| {
        let mut n = net.clone();
        let (g, loss) = model_loss(&n, &input, &triplets, scale);
        n.params_mut().accumulate(&g.backward(loss).unwrap());
        n.params().iter().flat_map(|(_, p)| p.tensor.grad().unwrap().to_vec()).collect::<Vec<f64>>()
    };
    let one = grads(1.0);
    let two = grads(2.0);
    assert!(one.iter().any(|&v| v != 0.0));
    for (a, b) in one.iter().zip(&two) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn backward_needs_a_recorded_graph() {
    let g: Graph<f64> = Graph::new();
    let mut other: Graph<f64> = Graph::new();
    let v = other.input(Tensor::scalar(1.0));
    assert!(g.backward(v).is_err());
}
