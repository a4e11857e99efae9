use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Element, Shape, Tensor};

/// Uniform values in `[-1, 1)`.
pub fn random_tensor<T: Element>(shape: impl Into<Shape>, seed: u64) -> Tensor<T> {
    let shape = shape.into();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.numel())
        .map(|_| T::from_f64_lossy(rng.random_range(-1.0..1.0)))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}
