//! The semantic digital-analog converter: adapter, learnable codebook,
//! quantization to bits and back, training loss and the ASE metric.

mod adapter;
mod ase;
mod codebook;
mod loss;
mod quantize;
mod state;

pub use adapter::{adapter_combine, adapter_expand, AdapterParams, LatentShape};
pub use ase::{ase, AseReport, AseWeights};
pub use codebook::{bits_to_index, index_to_bits, Codebook, MAX_ORDER};
pub use loss::{sdac_loss, sdac_loss_graph, LossWeights, Reduction, SdacGraph, SdacLoss, S_PRIME};
pub use quantize::{decode_indices, dequantize, dequantize_batch, lookup, quantize};
pub use state::{Decoded, Encoded, SdacState, CODEBOOK, COMBINE_B, COMBINE_W, EXPAND_B, EXPAND_W};

pub(crate) use codebook::check_order;
