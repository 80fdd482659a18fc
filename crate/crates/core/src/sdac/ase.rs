//! Average semantic error.
//!
//! `ASE = (1/N) sum_i [alpha |a_i - s'_i| + beta |ŝ'_i - a_i| + gamma |ŝ_i - s_i|]`
//! over the `N` latent positions, where `a_i` is the entry selected at the
//! transmitter. The first term measures codebook fit, the second channel
//! displacement in codebook space, the third end-to-end latent error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{expanded_dims, latent_dims, DenseTensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AseWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl AseWeights {
    /// `(1, 0, 1)`: codebook fit plus end-to-end error, no channel term.
    pub const NO_CHANNEL_TERM: Self = Self {
        alpha: 1.0,
        beta: 0.0,
        gamma: 1.0,
    };
}

impl Default for AseWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

/// Unweighted per-term means and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AseReport {
    /// Mean `|a_i - s'_i|`.
    pub kl: f64,
    /// Mean `|ŝ'_i - a_i|`.
    pub channel: f64,
    /// Mean `|ŝ_i - s_i|`.
    pub quant: f64,
    pub total: f64,
}

/// `s`/`s_hat` are `[C,H,W]` or `[B,C,H,W]`; `s_prime`, `s_hat_prime` and
/// `selected` the matching expanded `[.., q, C, H, W]` tensors.
pub fn ase(
    s: &DenseTensor,
    s_prime: &DenseTensor,
    s_hat_prime: &DenseTensor,
    s_hat: &DenseTensor,
    selected: &DenseTensor,
    weights: AseWeights,
) -> Result<AseReport> {
    let (batch, channels, spatial) = latent_dims(s.shape())?;
    let (eb, q, ec, es) = expanded_dims(s_prime.shape())?;
    if s_hat.shape() != s.shape()
        || (eb, ec, es) != (batch, channels, spatial)
        || s_hat_prime.shape() != s_prime.shape()
        || selected.shape() != s_prime.shape()
    {
        return Err(Error::shape(format!(
            "ase: s {:?}, s' {:?}, ŝ' {:?}, ŝ {:?}, a {:?}",
            s.shape(),
            s_prime.shape(),
            s_hat_prime.shape(),
            s_hat.shape(),
            selected.shape()
        )));
    }
    let positions = channels * spatial;
    let (sp, shp, a) = (s_prime.data(), s_hat_prime.data(), selected.data());
    let mut kl = 0.0;
    let mut channel = 0.0;
    for n in 0..batch {
        for p in 0..positions {
            let mut d_kl = 0.0;
            let mut d_ch = 0.0;
            for j in 0..q {
                let k = (n * q + j) * positions + p;
                d_kl += (a[k] - sp[k]).powi(2);
                d_ch += (shp[k] - a[k]).powi(2);
            }
            kl += d_kl.sqrt();
            channel += d_ch.sqrt();
        }
    }
    let quant: f64 = s.data().iter().zip(s_hat.data()).map(|(x, y)| (y - x).abs()).sum();
    let n = (batch * positions) as f64;
    let (kl, channel, quant) = (kl / n, channel / n, quant / n);
    Ok(AseReport {
        kl,
        channel,
        quant,
        total: weights.alpha * kl + weights.beta * channel + weights.gamma * quant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn rand(rng: &mut SeededRng, shape: &[usize]) -> DenseTensor {
        DenseTensor::new(shape.to_vec(), rng.uniform_range(shape.iter().product(), -1.0, 1.0)).unwrap()
    }

    #[test]
    fn noiseless_channel_term_is_zero() {
        let mut rng = SeededRng::new(1);
        let s = rand(&mut rng, &[2, 2, 2]);
        let sp = rand(&mut rng, &[2, 2, 2, 2]);
        let a = rand(&mut rng, &[2, 2, 2, 2]);
        let sh = rand(&mut rng, &[2, 2, 2]);
        let w = AseWeights {
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.0,
        };
        assert_eq!(ase(&s, &sp, &a, &sh, &a, w).unwrap().total, 0.0);
    }

    #[test]
    fn perfect_fit_is_zero_for_any_weights() {
        let mut rng = SeededRng::new(2);
        let s = rand(&mut rng, &[2, 2, 2]);
        let a = rand(&mut rng, &[2, 2, 2, 2]);
        let hat = rand(&mut rng, &[2, 2, 2, 2]);
        let r = ase(&s, &a, &hat, &s, &a, AseWeights::NO_CHANNEL_TERM).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(r.channel > 0.0);
    }

    #[test]
    fn matches_per_position_loop() {
        let mut rng = SeededRng::new(3);
        let (q, c, h, w) = (2, 3, 2, 2);
        let s = rand(&mut rng, &[c, h, w]);
        let sh = rand(&mut rng, &[c, h, w]);
        let sp = rand(&mut rng, &[q, c, h, w]);
        let shp = rand(&mut rng, &[q, c, h, w]);
        let a = rand(&mut rng, &[q, c, h, w]);
        let wts = AseWeights {
            alpha: 0.3,
            beta: 0.5,
            gamma: 0.2,
        };
        let got = ase(&s, &sp, &shp, &sh, &a, wts).unwrap();
        let n = c * h * w;
        let mut want = 0.0;
        for i in 0..n {
            let norm = |x: &DenseTensor, y: &DenseTensor| {
                (0..q).map(|j| (x.data()[j * n + i] - y.data()[j * n + i]).powi(2)).sum::<f64>().sqrt()
            };
            want += wts.alpha * norm(&a, &sp) + wts.beta * norm(&shp, &a) + wts.gamma * (sh.data()[i] - s.data()[i]).abs();
        }
        want /= n as f64;
        assert!((got.total - want).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = SeededRng::new(4);
        let s = rand(&mut rng, &[2, 2, 2]);
        let sp = rand(&mut rng, &[2, 3, 2, 2]);
        assert!(ase(&s, &sp, &sp, &s, &sp, AseWeights::default()).is_err());
    }
}
