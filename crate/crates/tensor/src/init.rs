use rand::Rng;

use crate::tensor::Tensor;

/// Uniform(−1/√fan_in, 1/√fan_in) weight matrix of shape `fan_in × fan_out`.
pub fn uniform_weight<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::matrix(fan_in, fan_out, data)
        .expect("uniform_weight: valid shape")
        .with_grad()
}

/// Uniform(−bound, bound) tensor of any shape.
pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data)
        .expect("uniform: valid shape")
        .with_grad()
}
