//! Inverted dropout.

use rand::Rng;

use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::shape("dropout rate in [0, 1)", rate));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Multiplicative mask: 0 for dropped units, `1 / (1 - rate)` for kept
    /// ones, so the expected activation is unchanged.
    pub fn sample_mask<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        if self.rate == 0.0 {
            return vec![1.0; len];
        }
        let keep = 1.0 - self.rate;
        (0..len)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect()
    }
}

pub fn apply_mask(values: &mut [f64], mask: &[f64]) {
    for (v, m) in values.iter_mut().zip(mask) {
        *v *= m;
    }
}
