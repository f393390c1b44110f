//! AdamW training with early stopping, evaluation and checkpoints.

pub mod adamw;
pub mod checkpoint;
pub mod config;
mod train;

pub use adamw::{adamw_step, AdamWConfig, OptimizerState};
pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use train::{
    cross_validate, evaluate, loss_and_grads, predict, score, split_windows, train, train_on,
    EpochLog, EvalReport, TrainOutcome,
};
