//! Minimal reverse-mode automatic differentiation over dense `f64` tensors,
//! with the kernels, optimizers and schedules the network needs.

mod checkpoint;
mod conv;
mod gradcheck;
mod norm;
mod ops;
mod optim;
mod resample;
mod scatter;
mod schedule;
mod tensor;

use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointEntry};
pub use conv::{conv3d, conv_output_len, Conv3dOpts};
pub use gradcheck::{grad_check, grad_check_many, relative_error};
pub use norm::{batch_norm, Mode, RunningStats, BN_EPSILON, BN_MOMENTUM};
pub use ops::Activation;
pub use optim::{OptimizerKind, OptimizerState, Parameter};
pub use resample::{resample_volume, ResampleMode};
pub use scatter::scatter_mean;
pub use schedule::{LrSchedule, ScheduleKind};
pub use tensor::{grad_enabled, no_grad, Tensor};

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),
    #[error("checkpoint format violation: {0}")]
    FormatViolation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
