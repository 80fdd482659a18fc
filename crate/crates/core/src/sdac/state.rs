use super::adapter::{adapter_combine, adapter_expand, AdapterParams, LatentShape};
use super::codebook::Codebook;
use super::quantize::{dequantize_batch, quantize};
use crate::channel::BitSequence;
use crate::error::{Error, Result};
use crate::numerics::{DenseTensor, ParamSet, SeededRng};

pub const CODEBOOK: &str = "sdac.codebook";
pub const EXPAND_W: &str = "sdac.expand_w";
pub const EXPAND_B: &str = "sdac.expand_b";
pub const COMBINE_W: &str = "sdac.combine_w";
pub const COMBINE_B: &str = "sdac.combine_b";

/// Codebook plus adapter: everything the converter learns.
#[derive(Clone, Debug, PartialEq)]
pub struct SdacState {
    pub codebook: Codebook,
    pub adapter: AdapterParams,
}

/// Intermediate signals of the analog-to-digital side.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub s_prime: DenseTensor,
    pub indices: Vec<usize>,
    pub bits: BitSequence,
}

/// Intermediate signals of the digital-to-analog side.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub indices: Vec<usize>,
    pub s_hat_prime: DenseTensor,
    pub s_hat: DenseTensor,
}

impl SdacState {
    pub fn new(codebook: Codebook, adapter: AdapterParams) -> Result<Self> {
        if codebook.order() != adapter.order() {
            return Err(Error::shape(format!(
                "codebook q={} but adapter q={}",
                codebook.order(),
                adapter.order()
            )));
        }
        Ok(Self { codebook, adapter })
    }

    pub fn init(channels: usize, q: usize, rng: &mut SeededRng) -> Result<Self> {
        let codebook = Codebook::init(q, rng)?;
        let adapter = AdapterParams::init(channels, q, rng)?;
        Self::new(codebook, adapter)
    }

    pub fn order(&self) -> usize {
        self.codebook.order()
    }

    pub fn channels(&self) -> usize {
        self.adapter.channels()
    }

    pub fn to_params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(CODEBOOK, self.codebook.entries().clone());
        p.insert(EXPAND_W, self.adapter.expand_weight.clone());
        p.insert(EXPAND_B, self.adapter.expand_bias.clone());
        p.insert(COMBINE_W, self.adapter.combine_weight.clone());
        p.insert(COMBINE_B, self.adapter.combine_bias.clone());
        p
    }

    pub fn from_params(params: &ParamSet) -> Result<Self> {
        let entries = params.get(CODEBOOK)?.clone();
        let q = entries.shape().get(1).copied().unwrap_or(0);
        let codebook = Codebook::new(q, entries)?;
        let adapter = AdapterParams::new(
            params.get(EXPAND_W)?.clone(),
            params.get(EXPAND_B)?.clone(),
            params.get(COMBINE_W)?.clone(),
            params.get(COMBINE_B)?.clone(),
        )?;
        Self::new(codebook, adapter)
    }

    /// `s -> s' -> indices -> bits` for a `[B,C,H,W]` latent batch.
    pub fn encode(&self, s: &DenseTensor) -> Result<Encoded> {
        let s_prime = adapter_expand(s, &self.adapter)?;
        let (indices, bits) = quantize(&s_prime, &self.codebook)?;
        Ok(Encoded {
            s_prime,
            indices,
            bits,
        })
    }

    /// `bits -> ŝ' -> ŝ` for `batch` latents of `shape`.
    pub fn decode(&self, bits: &BitSequence, shape: LatentShape, batch: usize) -> Result<Decoded> {
        let s_hat_prime = dequantize_batch(bits, &self.codebook, shape, batch)?;
        let indices = super::quantize::decode_indices(bits, self.order())?;
        let s_hat = adapter_combine(&s_hat_prime, &self.adapter)?;
        Ok(Decoded {
            indices,
            s_hat_prime,
            s_hat,
        })
    }
}
