//! Seeded weight initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;

/// Uniform in `[-limit, limit]`.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: Vec<usize>, limit: f64) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape, values).expect("count matches shape")
}

/// He-uniform: limit `sqrt(6 / fan_in)`.
pub fn he_uniform<R: Rng + ?Sized>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Tensor {
    uniform(rng, shape, (6.0 / fan_in as f64).sqrt())
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R, shape: Vec<usize>, std: f64) -> Tensor {
    let n = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    let values = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape, values).expect("count matches shape")
}
