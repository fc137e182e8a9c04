//! Seeded parameter initialization. Draw order is fixed by registration
//! order, so a (seed, architecture) pair always produces identical weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Scalar, Tensor};

pub struct InitRng {
    rng: ChaCha8Rng,
}

impl InitRng {
    pub fn new(seed: u64) -> Self {
        InitRng { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// He (Kaiming) uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
    pub fn kaiming_uniform<T: Scalar>(&mut self, shape: [usize; 4], fan_in: usize) -> Tensor<T> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<T> =
            (0..n).map(|_| T::fromf(self.rng.gen_range(-bound..bound))).collect();
        Tensor::from_vec(shape, data)
    }

    pub fn uniform<T: Scalar>(&mut self, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n).map(|_| T::fromf(self.rng.gen_range(lo..hi))).collect();
        Tensor::from_vec(shape, data)
    }
}
