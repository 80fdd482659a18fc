use serde::{Deserialize, Serialize};

use crate::channel::BitSequence;
use crate::error::{Error, Result};
use crate::numerics::DenseTensor;
use crate::sdac::{bits_to_index, check_order, index_to_bits};

/// Uniform scalar quantizer over a clip range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqConfig {
    pub q: usize,
    pub clip_range: (f64, f64),
}

impl Default for DqConfig {
    fn default() -> Self {
        Self {
            q: 4,
            clip_range: (-1.0, 1.0),
        }
    }
}

impl DqConfig {
    pub fn new(q: usize, lo: f64, hi: f64) -> Result<Self> {
        let c = Self {
            q,
            clip_range: (lo, hi),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        check_order(self.q)?;
        let (lo, hi) = self.clip_range;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::invalid(format!("clip range [{lo}, {hi}]")));
        }
        Ok(())
    }

    pub fn max_level(&self) -> usize {
        (1 << self.q) - 1
    }

    /// Distance between adjacent reconstruction values.
    pub fn step(&self) -> f64 {
        (self.clip_range.1 - self.clip_range.0) / self.max_level() as f64
    }

    /// `round((clamp(v) - lo) / (hi - lo) * (2^q - 1))`, halves away from zero.
    pub fn level(&self, v: f64) -> usize {
        let (lo, hi) = self.clip_range;
        let t = (v.clamp(lo, hi) - lo) / (hi - lo) * self.max_level() as f64;
        t.round() as usize
    }

    pub fn value(&self, level: usize) -> f64 {
        self.clip_range.0 + level as f64 * self.step()
    }
}

/// Big-endian `q`-bit levels of every value of `s`, in storage order.
pub fn dq_quantize(s: &DenseTensor, cfg: &DqConfig) -> BitSequence {
    let mut bits = BitSequence::default();
    for &v in s.data() {
        index_to_bits(cfg.level(v), cfg.q, &mut bits);
    }
    bits
}

/// Inverse of [`dq_quantize`]: decodes `q`-bit groups into reconstruction values.
pub fn dq_dequantize(bits: &BitSequence, cfg: &DqConfig, shape: &[usize]) -> Result<DenseTensor> {
    let n: usize = shape.iter().product();
    if bits.len() != n * cfg.q {
        return Err(Error::shape(format!(
            "dq: {} bits for {n} values at q={}",
            bits.len(),
            cfg.q
        )));
    }
    let data = bits
        .as_slice()
        .chunks_exact(cfg.q)
        .map(|g| cfg.value(bits_to_index(g)))
        .collect();
    DenseTensor::new(shape.to_vec(), data)
}
