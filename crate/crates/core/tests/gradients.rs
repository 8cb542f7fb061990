mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wscl_core::compute::{EmbeddingSource, Network, Tensor};

#[test]
fn every_loss_matches_finite_differences() {
    for r in common::gradient_suite(100) {
        assert!(
            r.passed(),
            "{}: worst relative error {:.2e}, active on {}/{} points ({} redrawn)",
            r.name,
            r.worst,
            r.active,
            r.points,
            r.redrawn
        );
    }
}

#[test]
fn sum_of_logits_gradient_is_outer_product_with_ones() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Network::mlp(3, &[], 2, EmbeddingSource::Logits, &mut rng).unwrap();
    let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 4.0]]).unwrap();
    net.forward_train(&x).unwrap();
    let ones = Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
    let g = net.backward(&ones, None).unwrap();
    // Weights are row-major (output, input), then biases.
    assert_eq!(g, vec![0.0, 2.5, 7.0, 0.0, 2.5, 7.0, 2.0, 2.0]);
}
