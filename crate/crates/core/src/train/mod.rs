//! Losses, Adam, the learning-rate schedule and the segment training loop.

mod loss;
mod optim;
mod trainer;

pub use loss::{loss, LossConfig, LossKind};
pub use optim::{adam_step, lr_at, AdamState, OptimConfig, StepOutcome};
pub use trainer::{train, EpochMetrics, TrainOptions, TrainOutcome};
