//! Shared fixtures for the criterion benches.

use grainseg_core::{Rng, Tensor};

/// Random NCHW tensor with values in [-1, 1).
pub fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-1.0, 1.0) as f32).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Same as [`random_tensor`], but a trainable leaf.
pub fn random_param(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-1.0, 1.0) as f32).collect();
    Tensor::param(shape, data).expect("shape matches data")
}
