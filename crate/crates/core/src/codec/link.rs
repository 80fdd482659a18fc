use crate::baselines::{flip_per_item, Scheme};
use crate::channel::{BitSequence, ChannelSpec};
use crate::error::{Error, Result};
use crate::harness::data::ImageSet;
use crate::harness::metrics::{ms_ssim, psnr};
use crate::numerics::{DenseTensor, SeededRng};
use crate::sdac::{lookup, SdacState};

use super::network::CodecParams;

/// Every intermediate signal of one pass through the converter link.
#[derive(Clone, Debug)]
pub struct LinkDiagnostics {
    /// Encoder output, `[B,C,h,w]`.
    pub s: DenseTensor,
    /// Adapter output, `[B,q,C,h,w]`.
    pub s_prime: DenseTensor,
    pub indices: Vec<usize>,
    pub bits: BitSequence,
    pub received_bits: BitSequence,
    pub received_indices: Vec<usize>,
    /// Codebook entries chosen at the transmitter, `[B,q,C,h,w]`.
    pub selected: DenseTensor,
    /// Codebook entries looked up at the receiver, `[B,q,C,h,w]`.
    pub s_hat_prime: DenseTensor,
    /// Combine-adapter output, `[B,C,h,w]`.
    pub s_hat: DenseTensor,
}

fn as_batch(codec: &CodecParams, x: &DenseTensor) -> Result<DenseTensor> {
    let (h, w) = (codec.arch.height, codec.arch.width);
    match x.shape() {
        [a, b] if (*a, *b) == (h, w) => x.reshape(&[1, h, w]),
        [_, a, b] if (*a, *b) == (h, w) => Ok(x.clone()),
        other => Err(Error::shape(format!("image {other:?} vs configured [{h}, {w}]"))),
    }
}

/// `x -> s -> s' -> b -> BSC(p) -> b̂ -> ŝ' -> ŝ -> x'`.
///
/// `x` is `[H,W]` or `[B,H,W]`; `x'` comes back as `[B,H,W]`, unclamped.
pub fn forward_link(
    x: &DenseTensor,
    codec: &CodecParams,
    state: &SdacState,
    p: f64,
    rng: &mut SeededRng,
) -> Result<(DenseTensor, LinkDiagnostics)> {
    let xb = as_batch(codec, x)?;
    let batch = xb.shape()[0];
    let s = codec.encode(&xb)?;
    let enc = state.encode(&s)?;
    let received_bits = flip_per_item(&enc.bits, &vec![ChannelSpec::bsc(p)?; batch], rng)?;
    let latent = codec.arch.latent;
    let dec = state.decode(&received_bits, latent, batch)?;
    let selected = lookup(&enc.indices, &state.codebook, latent, Some(batch))?;
    let x_prime = codec.decode(&dec.s_hat)?;
    Ok((
        x_prime,
        LinkDiagnostics {
            s,
            s_prime: enc.s_prime,
            indices: enc.indices,
            bits: enc.bits,
            received_bits,
            received_indices: dec.indices,
            selected,
            s_hat_prime: dec.s_hat_prime,
            s_hat: dec.s_hat,
        },
    ))
}

/// Encoder, scheme link and decoder for a `[B,H,W]` batch; `x'` unclamped.
pub fn scheme_link(
    x: &DenseTensor,
    codec: &CodecParams,
    scheme: &dyn Scheme,
    channel: &ChannelSpec,
    rng: &mut SeededRng,
) -> Result<DenseTensor> {
    let xb = as_batch(codec, x)?;
    let s = codec.encode(&xb)?;
    let s_hat = scheme.transmit(&s, channel, rng)?;
    codec.decode(&s_hat)
}

/// Mean per-image PSNR (dB) and MS-SSIM of clamped reconstructions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub psnr_db: f64,
    pub ms_ssim: Option<f64>,
}

const EVAL_CHUNK: usize = 256;

pub fn evaluate(
    data: &ImageSet,
    codec: &CodecParams,
    scheme: &dyn Scheme,
    channel: &ChannelSpec,
    with_ms_ssim: bool,
    rng: &mut SeededRng,
) -> Result<EvalMetrics> {
    let (h, w) = (data.height(), data.width());
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let x = data.batch(chunk)?;
        let xr = scheme_link(&x, codec, scheme, channel, rng)?.map(|v| v.clamp(0.0, 1.0));
        for k in 0..chunk.len() {
            let a = &x.data()[k * h * w..(k + 1) * h * w];
            let b = &xr.data()[k * h * w..(k + 1) * h * w];
            psnr_sum += psnr(a, b)?;
            if with_ms_ssim {
                ssim_sum += ms_ssim(a, b, h, w)?;
            }
        }
    }
    let n = data.len() as f64;
    Ok(EvalMetrics {
        psnr_db: psnr_sum / n,
        ms_ssim: with_ms_ssim.then(|| ssim_sum / n),
    })
}
