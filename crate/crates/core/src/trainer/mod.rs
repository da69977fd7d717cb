//! Deterministic desk-scale trainer: synthetic tasks, a rectifier MLP
//! trained by AdamW with optional quantization-aware training, and the
//! evaluation harness for patched receivers.

pub mod adamw;
pub mod eval;
pub mod mlp;
pub mod tasks;
pub mod train;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use eval::{
    accuracy, evaluate_top1, lambda_grid, lambda_sweep, ptq_accuracy, transfer_gain, SweepResult,
};
pub use mlp::Mlp;
pub use tasks::{make_task, make_task_sized, Split, ToyTask, REGISTERED_TASKS, TASK_DIM};
pub use train::{initial_model, train, TrainConfig};
