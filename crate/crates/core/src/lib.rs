pub mod error;
pub mod channel;
pub mod numerics;
pub mod sdac;
pub mod codec;
pub mod baselines;
pub mod harness;

pub use error::{Error, Result};
