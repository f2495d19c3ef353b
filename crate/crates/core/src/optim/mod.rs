//! Initializers, gradient clipping and first-order optimizers.

mod clip;
mod init;
mod optimizer;

pub use clip::{clip_gradients, ClipConfig, ClipMode};
pub use init::{identity_init, orthogonal_init, orthogonal_with, stacked_identity, stacked_orthogonal};
pub use optimizer::{OptimConfig, OptimState, OptimizerKind};
