//! Training runs and diagnostic studies assembled from the other modules,
//! with results written as CSV tables and JSONL run records.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod model;
pub mod output;
pub mod studies;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{EstimatorKind, ExperimentConfig, TaskKind};
pub use data::{load_task, TaskData};
pub use model::Model;
pub use studies::{
    eval_lengths, gamma_sweep, grad_flow_sweep, popstat_trace, tanh_derivative_study, GradFlowRow, LengthRow,
    PopTrace, TanhRow,
};
pub use train::{train, train_on, MetricRow, RunRecord, TrainOutcome};
