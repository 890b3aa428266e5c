//! Deterministic parameter initialization.

use super::ParamSet;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Accumulates named parameters; values drawn from one seeded stream in
/// creation order, so a (spec, seed) pair always yields identical tensors.
pub struct ParamBuilder {
    rng: ChaCha8Rng,
    set: ParamSet,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            set: ParamSet::default(),
        }
    }

    fn push(&mut self, name: &str, t: Tensor) -> usize {
        debug_assert!(
            self.set.index_of(name).is_none(),
            "duplicate parameter name {name}"
        );
        self.set.names.push(name.to_string());
        self.set.tensors.push(t.with_grad());
        self.set.tensors.len() - 1
    }

    /// Fan-in-scaled uniform weights on ±(1/fan_in)^0.5.
    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> usize {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| self.rng.random::<f64>() * 2.0 * bound - bound)
            .collect();
        self.push(name, Tensor::from_vec(shape, data))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> usize {
        self.push(name, Tensor::zeros(shape))
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> usize {
        let n: usize = shape.iter().product();
        self.push(name, Tensor::from_vec(shape, vec![value; n]))
    }

    pub fn tensor(&mut self, name: &str, t: Tensor) -> usize {
        self.push(name, t)
    }

    pub fn finish(self) -> ParamSet {
        self.set
    }
}
