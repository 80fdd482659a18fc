//! Comparison schemes and the registry that builds them by name.

pub mod cm;
pub mod dq;
mod scheme;

pub use cm::{cm_project, cm_transmit, CmConfig};
pub use dq::{dq_dequantize, dq_quantize, DqConfig};
pub use scheme::{
    build_scheme, flip_per_item, AnalogScheme, ChannelDraw, CmScheme, DqScheme, GraphLink, Scheme,
    SchemeOptions, SdacScheme, SCHEMES,
};

use crate::channel::ChannelSpec;
use crate::codec::{scheme_link, CodecParams};
use crate::error::Result;
use crate::numerics::{DenseTensor, SeededRng};

/// Encoder, `scheme` over `channel`, decoder. Output is unclamped.
pub fn baseline_link(
    x: &DenseTensor,
    codec: &CodecParams,
    scheme: &dyn Scheme,
    channel: &ChannelSpec,
    rng: &mut SeededRng,
) -> Result<DenseTensor> {
    scheme_link(x, codec, scheme, channel, rng)
}
