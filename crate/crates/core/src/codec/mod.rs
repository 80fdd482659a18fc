//! Desk-scale semantic codec and the end-to-end training loop.

pub mod link;
pub mod network;
pub mod optim;
pub mod train;

pub use link::{evaluate, forward_link, scheme_link, EvalMetrics, LinkDiagnostics};
pub use network::{CodecArch, CodecParams};
pub use optim::{optimizer, Adam, Optimizer, Sgd, OPTIMIZERS};
pub use train::{
    draw_channels, probe_channel, probe_psnr, train, train_from, train_step, train_step_on, EpochRecord,
    History, Model, StepOutput, TrainConfig, PROBE_BERS,
};
