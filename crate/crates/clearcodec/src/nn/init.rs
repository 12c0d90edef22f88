//! Seeded parameter initialization.
//!
//! Weights are drawn from a uniform distribution only: uniform variates
//! come straight from the ChaCha stream with exact integer-to-float
//! conversion, so a (profile, seed) pair produces bit-identical models on
//! every platform. Gaussian samplers would route through libm and break
//! that.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Scalar, Tensor};

pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// U(−bound, bound) tensor.
    pub fn uniform<T: Scalar>(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(self.rng.random_range(-bound..bound)))
            .collect();
        Tensor::from_vec(shape.to_vec(), data).expect("sized to shape")
    }

    /// Fan-in scaled init for a conv kernel [co, cig, kh, kw].
    pub fn conv_weight<T: Scalar>(&mut self, co: usize, cig: usize, kh: usize, kw: usize) -> Tensor<T> {
        let fan_in = (cig * kh * kw) as f64;
        self.uniform(&[co, cig, kh, kw], 1.0 / fan_in.sqrt())
    }

    pub fn conv_bias<T: Scalar>(&mut self, co: usize, fan_in: usize) -> Tensor<T> {
        self.uniform(&[co], 1.0 / (fan_in as f64).sqrt())
    }
}
