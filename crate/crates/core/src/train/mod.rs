mod checkpoint;
mod engine;
mod init;
mod optim;

pub use checkpoint::{Checkpoint, RngState};
pub use engine::{
    episode_accuracy, read_metrics, RunOptions, StepStats, StopReason, TrainConfig, TrainSummary,
    Trainer, METRICS_HEADER,
};
pub use init::{xavier_bound, xavier_init};
pub use optim::{clip_gradients, gradient_norm, lr_at, Adam, AdamConfig, ClipMode};
