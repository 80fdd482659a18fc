//! Tensor arithmetic, seeded randomness, special functions and gradient
//! verification shared by every other module.

mod gradcheck;
mod params;
mod rng;
mod special;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use params::{BoundParams, Gradient, ParamSet};
pub use rng::{SeededRng, RNG_ALGORITHM};
pub use special::{erf, erfc};
pub use tape::{Grads, Tape, Var};
pub use tensor::DenseTensor;

pub(crate) use tape::{
    expanded_dims, gather_rows_forward, group_combine_forward, group_expand_forward, latent_dims,
};
