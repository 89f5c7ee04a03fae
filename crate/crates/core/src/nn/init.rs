//! Weight initialization.

use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Kaiming-uniform with fan-in: U(−√(6/fan_in), +√(6/fan_in)).
pub fn kaiming_uniform<E: Element>(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Tensor<E> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

/// U(−1/√h, +1/√h), used for recurrent matrices.
pub fn recurrent_uniform<E: Element>(shape: Vec<usize>, h: usize, rng: &mut Rng) -> Tensor<E> {
    let bound = 1.0 / (h as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}
