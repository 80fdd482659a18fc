use super::adapter::LatentShape;
use super::codebook::{bits_to_index, index_to_bits, Codebook};
use crate::channel::BitSequence;
use crate::error::{Error, Result};
use crate::numerics::{expanded_dims, gather_rows_forward, DenseTensor};

/// Nearest-entry indices for every position of `s_prime` (`[q,C,H,W]` or
/// `[B,q,C,H,W]`), in row-major position order, with their bit patterns
/// concatenated in the same order.
pub fn quantize(s_prime: &DenseTensor, cb: &Codebook) -> Result<(Vec<usize>, BitSequence)> {
    let (batch, q, _, _) = expanded_dims(s_prime.shape())?;
    if q != cb.order() {
        return Err(Error::shape(format!(
            "quantize: tensor q={q}, codebook q={}",
            cb.order()
        )));
    }
    let positions = s_prime.len() / (batch * q);
    let data = s_prime.data();
    let mut indices = Vec::with_capacity(batch * positions);
    let mut bits = BitSequence::default();
    let mut v = vec![0.0; q];
    for n in 0..batch {
        for p in 0..positions {
            for (j, slot) in v.iter_mut().enumerate() {
                *slot = data[(n * q + j) * positions + p];
            }
            let i = cb.nearest(&v);
            indices.push(i);
            index_to_bits(i, q, &mut bits);
        }
    }
    Ok((indices, bits))
}

/// Splits `bits` into `q`-bit groups and decodes each to an index.
pub fn decode_indices(bits: &BitSequence, q: usize) -> Result<Vec<usize>> {
    if q == 0 || !bits.len().is_multiple_of(q) {
        return Err(Error::shape(format!(
            "{} bits do not split into {q}-bit groups",
            bits.len()
        )));
    }
    Ok(bits.as_slice().chunks_exact(q).map(bits_to_index).collect())
}

/// Codebook entries for `indices`, laid out as `[B,q,C,H,W]` (or `[q,C,H,W]` when `batch` is `None`).
pub fn lookup(
    indices: &[usize],
    cb: &Codebook,
    shape: LatentShape,
    batch: Option<usize>,
) -> Result<DenseTensor> {
    let q = cb.order();
    let out_shape = match batch {
        Some(b) => shape.batched_expanded(b, q),
        None => vec![q, shape.channels, shape.height, shape.width],
    };
    gather_rows_forward(cb.entries(), indices, &out_shape)
}

/// Table look-up of a received bit sequence into `[q,C,H,W]` codebook vectors.
pub fn dequantize(b_hat: &BitSequence, cb: &Codebook, shape: LatentShape) -> Result<DenseTensor> {
    check_bit_length(b_hat, cb.order(), shape, 1)?;
    lookup(&decode_indices(b_hat, cb.order())?, cb, shape, None)
}

/// Batched [`dequantize`] producing `[B,q,C,H,W]`.
pub fn dequantize_batch(
    b_hat: &BitSequence,
    cb: &Codebook,
    shape: LatentShape,
    batch: usize,
) -> Result<DenseTensor> {
    check_bit_length(b_hat, cb.order(), shape, batch)?;
    lookup(&decode_indices(b_hat, cb.order())?, cb, shape, Some(batch))
}

fn check_bit_length(bits: &BitSequence, q: usize, shape: LatentShape, batch: usize) -> Result<()> {
    let want = batch * shape.positions() * q;
    if bits.len() != want {
        return Err(Error::shape(format!(
            "expected {want} bits for {batch} x {:?} at q={q}, got {}",
            shape.dims(),
            bits.len()
        )));
    }
    Ok(())
}
