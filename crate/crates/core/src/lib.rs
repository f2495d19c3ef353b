//! Batch-normalized recurrent networks.
//!
//! The crate is organized bottom-up: [`tensor`] and [`tape`] provide dense
//! arrays and reverse-mode differentiation, [`batchnorm`] the normalizing
//! transform and its statistics, [`recurrent`] the tanh RNN, LSTM and
//! BN-LSTM cells, [`optim`] initializers and optimizers, [`tasks`] data
//! ingestion and prediction heads, and [`experiments`] the training loop and
//! diagnostic studies driven by the command-line tool.

pub mod batchnorm;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod optim;
pub mod recurrent;
pub mod tape;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub use experiments::{ExperimentConfig, RunRecord};
pub use recurrent::{Cell, CellKind, Phase};
