//! Seeded, platform-independent random numbers.
//!
//! The generator is ChaCha8 (`rand_chacha::ChaCha8Rng`) keyed with
//! `seed_from_u64(seed)`. Derived conversions are implemented here so they
//! never change underneath a checkpoint:
//!
//! * uniform `f64` in `[0, 1)`: the top 53 bits of `next_u64()` times `2^-53`;
//! * standard normal: Box-Muller on two uniforms, both outputs used in order;
//! * bounded integers: rejection sampling on `next_u64()`.
//!
//! Independent streams for parallel workers come from [`SeededRng::split`],
//! which selects a ChaCha stream id without touching the parent.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::DenseTensor;
use crate::error::{Error, Result};

pub const RNG_ALGORITHM: &str = "chacha8-seed_from_u64/v1";

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for sub-task `stream`, derived from the seed only.
    pub fn split(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Self {
            seed: self.seed,
            inner,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// `n` samples in `[0, 1)`.
    pub fn uniform(&mut self, n: usize) -> Result<DenseTensor> {
        if n == 0 {
            return Err(Error::invalid("uniform: sample count must be at least 1"));
        }
        DenseTensor::from_vec((0..n).map(|_| self.next_f64()).collect())
    }

    pub fn uniform_range(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| lo + (hi - lo) * self.next_f64()).collect()
    }

    /// `n` zero-mean normal samples with standard deviation `sigma`.
    pub fn gaussian(&mut self, n: usize, sigma: f64) -> Result<DenseTensor> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("gaussian: sigma must be >= 0, got {sigma}")));
        }
        if n == 0 {
            return Err(Error::invalid("gaussian: sample count must be at least 1"));
        }
        DenseTensor::from_vec((0..n).map(|_| sigma * self.standard_normal()).collect())
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_mean_is_half() {
        let mut rng = SeededRng::new(1);
        let u = rng.uniform(1_000_000).unwrap();
        assert!(u.data().iter().all(|&v| (0.0..1.0).contains(&v)));
        assert!((u.mean() - 0.5).abs() < 0.002, "mean {}", u.mean());
    }

    #[test]
    fn same_seed_same_sequence() {
        let a = SeededRng::new(77).uniform(1000).unwrap();
        let b = SeededRng::new(77).uniform(1000).unwrap();
        assert_eq!(a, b);
        let c = SeededRng::new(78).uniform(1000).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_count_is_rejected() {
        let mut rng = SeededRng::new(1);
        assert!(rng.uniform(0).is_err());
        assert!(rng.gaussian(0, 1.0).is_err());
        assert!(rng.gaussian(4, -1.0).is_err());
    }

    #[test]
    fn gaussian_variance_scales_with_sigma() {
        fn var(t: &DenseTensor) -> f64 {
            let m = t.mean();
            t.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t.len() as f64
        }
        let zero = SeededRng::new(1).gaussian(100, 0.0).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        let g1 = SeededRng::new(1).gaussian(1_000_000, 1.0).unwrap();
        assert!((var(&g1) - 1.0).abs() < 0.01, "var {}", var(&g1));
        assert!(g1.mean().abs() < 0.005);
        let g2 = SeededRng::new(1).gaussian(1_000_000, 2.0).unwrap();
        assert!((var(&g2) - 4.0).abs() < 0.04, "var {}", var(&g2));
    }

    #[test]
    fn split_streams_are_independent_of_parent_state() {
        let mut parent = SeededRng::new(3);
        let a = parent.split(5).uniform(16).unwrap();
        parent.next_u64();
        let b = parent.split(5).uniform(16).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, parent.split(6).uniform(16).unwrap());
        assert_ne!(a, SeededRng::new(3).uniform(16).unwrap());
    }

    #[test]
    fn below_stays_in_range_and_covers_it() {
        let mut rng = SeededRng::new(11);
        let mut seen = [false; 7];
        for _ in 0..1000 {
            seen[rng.below(7)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
