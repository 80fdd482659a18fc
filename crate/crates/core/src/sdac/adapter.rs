//! Quantization adapter: a per-channel 1x1 group convolution.
//!
//! `expand` lifts every latent scalar to a `q`-vector with an affine map whose
//! weight and bias depend only on the scalar's channel; `combine` maps a
//! `q`-vector back to one scalar the same way. No output ever mixes two
//! latent positions.

use serde::{Deserialize, Serialize};

use super::codebook::check_order;
use crate::error::{Error, Result};
use crate::numerics::{group_combine_forward, group_expand_forward, DenseTensor, SeededRng};

/// Latent tensor geometry `(c, h, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LatentShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "latent shape ({channels}, {height}, {width}) has a zero axis"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
        })
    }

    /// Number of latent scalars `c * h * w`.
    pub fn positions(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn batched(&self, batch: usize) -> Vec<usize> {
        vec![batch, self.channels, self.height, self.width]
    }

    pub fn batched_expanded(&self, batch: usize, q: usize) -> Vec<usize> {
        vec![batch, q, self.channels, self.height, self.width]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterParams {
    /// `[C, q]`
    pub expand_weight: DenseTensor,
    /// `[C, q]`
    pub expand_bias: DenseTensor,
    /// `[C, q]`
    pub combine_weight: DenseTensor,
    /// `[C]`
    pub combine_bias: DenseTensor,
}

impl AdapterParams {
    pub fn new(
        expand_weight: DenseTensor,
        expand_bias: DenseTensor,
        combine_weight: DenseTensor,
        combine_bias: DenseTensor,
    ) -> Result<Self> {
        let (c, q) = expand_weight.as_matrix("expand weight")?;
        check_order(q)?;
        if expand_bias.shape() != [c, q]
            || combine_weight.shape() != [c, q]
            || combine_bias.shape() != [c]
        {
            return Err(Error::shape(format!(
                "adapter shapes: expand {:?}/{:?}, combine {:?}/{:?}",
                expand_weight.shape(),
                expand_bias.shape(),
                combine_weight.shape(),
                combine_bias.shape()
            )));
        }
        Ok(Self {
            expand_weight,
            expand_bias,
            combine_weight,
            combine_bias,
        })
    }

    /// Expand weights uniform in `[-1, 1]`, zero biases, and combine weights
    /// `w / |w|^2` so that `combine(expand(s)) == s` at initialization.
    pub fn init(channels: usize, q: usize, rng: &mut SeededRng) -> Result<Self> {
        check_order(q)?;
        let mut ew = rng.uniform_range(channels * q, -1.0, 1.0);
        let mut cw = vec![0.0; channels * q];
        for c in 0..channels {
            let row = &mut ew[c * q..(c + 1) * q];
            let mut norm2: f64 = row.iter().map(|v| v * v).sum();
            if norm2 < 1e-6 {
                row[0] = 1.0;
                norm2 = row.iter().map(|v| v * v).sum();
            }
            for j in 0..q {
                cw[c * q + j] = row[j] / norm2;
            }
        }
        Self::new(
            DenseTensor::new(vec![channels, q], ew)?,
            DenseTensor::zeros(&[channels, q])?,
            DenseTensor::new(vec![channels, q], cw)?,
            DenseTensor::zeros(&[channels])?,
        )
    }

    pub fn channels(&self) -> usize {
        self.expand_weight.shape()[0]
    }

    pub fn order(&self) -> usize {
        self.expand_weight.shape()[1]
    }
}

/// `[C,H,W] -> [q,C,H,W]` (or the batched `[B,C,H,W] -> [B,q,C,H,W]`).
pub fn adapter_expand(s: &DenseTensor, params: &AdapterParams) -> Result<DenseTensor> {
    group_expand_forward(s, &params.expand_weight, &params.expand_bias)
}

/// `[q,C,H,W] -> [C,H,W]` (or batched), the inverse-direction adapter.
pub fn adapter_combine(s_hat_prime: &DenseTensor, params: &AdapterParams) -> Result<DenseTensor> {
    group_combine_forward(s_hat_prime, &params.combine_weight, &params.combine_bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(c: usize, q: usize, rng: &mut SeededRng) -> AdapterParams {
        let r = |rng: &mut SeededRng, shape: &[usize]| {
            DenseTensor::new(shape.to_vec(), rng.uniform_range(shape.iter().product(), -1.0, 1.0))
                .unwrap()
        };
        AdapterParams::new(r(rng, &[c, q]), r(rng, &[c, q]), r(rng, &[c, q]), r(rng, &[c])).unwrap()
    }

    #[test]
    fn affine_identity_broadcast() {
        let p = AdapterParams::new(
            DenseTensor::full(&[2, 3], 1.0).unwrap(),
            DenseTensor::zeros(&[2, 3]).unwrap(),
            DenseTensor::full(&[2, 3], 1.0 / 3.0).unwrap(),
            DenseTensor::zeros(&[2]).unwrap(),
        )
        .unwrap();
        let s = DenseTensor::full(&[2, 2, 2], 2.0).unwrap();
        let e = adapter_expand(&s, &p).unwrap();
        assert_eq!(e.shape(), &[3, 2, 2, 2]);
        assert!(e.data().iter().all(|&v| v == 2.0));

        let k = DenseTensor::full(&[3, 2, 2, 2], 0.7).unwrap();
        let back = adapter_combine(&k, &p).unwrap();
        assert!(back.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn single_position_support() {
        let mut rng = SeededRng::new(2);
        let mut p = params(3, 4, &mut rng);
        p.expand_bias = DenseTensor::zeros(&[3, 4]).unwrap();
        p.combine_bias = DenseTensor::zeros(&[3]).unwrap();
        let mut s = DenseTensor::zeros(&[3, 2, 2]).unwrap();
        let hot = (2 + 1) * 2; // (c=1, h=1, w=0)
        s.data_mut()[hot] = 1.5;
        let e = adapter_expand(&s, &p).unwrap();
        let positions = 12;
        for (i, &v) in e.data().iter().enumerate() {
            if i % positions != hot {
                assert_eq!(v, 0.0);
            } else {
                assert_ne!(v, 0.0);
            }
        }
        let back = adapter_combine(&e, &p).unwrap();
        for (i, &v) in back.data().iter().enumerate() {
            assert_eq!(v != 0.0, i == hot);
        }
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = SeededRng::new(3);
        let (c, h, w, q) = (3, 2, 3, 2);
        let p = params(c, q, &mut rng);
        let s = DenseTensor::new(vec![c, h, w], rng.uniform_range(c * h * w, -2.0, 2.0)).unwrap();
        let e = adapter_expand(&s, &p).unwrap();
        let back = adapter_combine(&e, &p).unwrap();
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let pos = (ci * h + y) * w + x;
                    let v = s.data()[pos];
                    let mut acc = p.combine_bias.data()[ci];
                    for j in 0..q {
                        let want = p.expand_weight.data()[ci * q + j] * v + p.expand_bias.data()[ci * q + j];
                        let got = e.data()[((j * c + ci) * h + y) * w + x];
                        assert!((got - want).abs() < 1e-14);
                        acc += p.combine_weight.data()[ci * q + j] * want;
                    }
                    assert!((back.data()[pos] - acc).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn init_round_trips() {
        let mut rng = SeededRng::new(5);
        let p = AdapterParams::init(4, 3, &mut rng).unwrap();
        let s = DenseTensor::new(vec![4, 2, 2], rng.uniform_range(16, -1.0, 1.0)).unwrap();
        let back = adapter_combine(&adapter_expand(&s, &p).unwrap(), &p).unwrap();
        for (a, b) in back.data().iter().zip(s.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = SeededRng::new(1);
        let p = params(2, 2, &mut rng);
        let s = DenseTensor::zeros(&[3, 2, 2]).unwrap();
        assert!(adapter_expand(&s, &p).is_err());
        let e = DenseTensor::zeros(&[3, 2, 2, 2]).unwrap();
        assert!(adapter_combine(&e, &p).is_err());
        assert!(AdapterParams::new(
            DenseTensor::zeros(&[2, 2]).unwrap(),
            DenseTensor::zeros(&[2, 3]).unwrap(),
            DenseTensor::zeros(&[2, 2]).unwrap(),
            DenseTensor::zeros(&[2]).unwrap(),
        )
        .is_err());
    }
}
