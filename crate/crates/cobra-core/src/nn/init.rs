//! Seeded weight initialization.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Wraps the model-construction RNG so every layer draws from one stream.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    /// N(0, std^2) via Box-Muller; avoids pulling in a distributions crate
    /// for one sampler and keeps the byte stream stable.
    fn normal(&mut self, std: f64) -> f64 {
        let u1: f64 = self.rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = self.rng.gen_range(0.0..1.0);
        std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal_tensor(&mut self, shape: &[usize], std: f64) -> ArrayD<f64> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.normal(std)).collect();
        ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/product mismatch")
    }

    /// Kaiming-style init for ReLU fan-in layouts.
    pub fn kaiming(&mut self, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
        self.normal_tensor(shape, (2.0 / fan_in as f64).sqrt())
    }

    pub fn zeros(shape: &[usize]) -> ArrayD<f64> {
        ArrayD::zeros(IxDyn(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn deterministic_given_seed() {
        let mut a = Initializer::new(ChaCha8Rng::seed_from_u64(9));
        let mut b = Initializer::new(ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a.normal_tensor(&[4, 5], 0.02), b.normal_tensor(&[4, 5], 0.02));
    }

    #[test]
    fn std_roughly_matches() {
        let mut init = Initializer::new(ChaCha8Rng::seed_from_u64(1));
        let t = init.normal_tensor(&[10_000], 0.5);
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        let var = t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 0.5).abs() < 0.02, "std {}", var.sqrt());
    }
}
