//! Parameter initialization.

use rand::Rng;

use crate::Tensor;

/// Uniform values in `[-bound, bound)`.
pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.gen_range(-bound..bound);
    }
    t
}

/// He-style uniform initialization for ReLU layers, bound `sqrt(6 / fan_in)`.
pub fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}
