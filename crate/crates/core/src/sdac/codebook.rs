use crate::channel::BitSequence;
use crate::error::{Error, Result};
use crate::numerics::{DenseTensor, SeededRng};

pub const MAX_ORDER: usize = 8;

pub(crate) fn check_order(q: usize) -> Result<()> {
    if !(1..=MAX_ORDER).contains(&q) {
        return Err(Error::invalid(format!(
            "quantization order {q} outside 1..={MAX_ORDER}"
        )));
    }
    Ok(())
}

/// `2^q` learnable vectors in `R^q`.
///
/// Entry `i` travels over the channel as the fixed-width big-endian binary
/// form of `i`; see [`index_to_bits`].
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    q: usize,
    entries: DenseTensor,
}

impl Codebook {
    pub fn new(q: usize, entries: DenseTensor) -> Result<Self> {
        check_order(q)?;
        if entries.shape() != [1 << q, q] {
            return Err(Error::shape(format!(
                "codebook of order {q} needs shape [{}, {q}], got {:?}",
                1 << q,
                entries.shape()
            )));
        }
        if !entries.is_finite() {
            return Err(Error::NonFinite("codebook entries".into()));
        }
        Ok(Self { q, entries })
    }

    /// Entries drawn i.i.d. uniform in `[-1, 1]^q`.
    pub fn init(q: usize, rng: &mut SeededRng) -> Result<Self> {
        check_order(q)?;
        let n = (1 << q) * q;
        Self::new(q, DenseTensor::new(vec![1 << q, q], rng.uniform_range(n, -1.0, 1.0))?)
    }

    pub fn order(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        1 << self.q
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn entry(&self, index: usize) -> &[f64] {
        &self.entries.data()[index * self.q..(index + 1) * self.q]
    }

    pub fn entries(&self) -> &DenseTensor {
        &self.entries
    }

    pub fn into_tensor(self) -> DenseTensor {
        self.entries
    }

    /// Index of the entry closest to `v` in squared Euclidean distance,
    /// lowest index on ties.
    pub fn nearest(&self, v: &[f64]) -> usize {
        debug_assert_eq!(v.len(), self.q);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, e) in self.entries.data().chunks_exact(self.q).enumerate() {
            let d: f64 = e.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Appends the `q`-bit big-endian binary form of `index` to `out`.
pub fn index_to_bits(index: usize, q: usize, out: &mut BitSequence) {
    debug_assert!(index < 1 << q);
    for k in (0..q).rev() {
        out.push(((index >> k) & 1) as u8);
    }
}

/// Inverse of [`index_to_bits`] for one `q`-bit group.
pub fn bits_to_index(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | usize::from(b))
}
