//! Inverse physics-informed training: point sets, the three-term loss with
//! its exact gradient, the mini-batch training loop and restart statistics.

use thiserror::Error;

use crate::grid::GridError;
use crate::nn::NetError;
use crate::params::ParamError;

pub mod aggregate;
pub mod loss;
pub mod points;
pub mod residual;
pub mod train;

pub use aggregate::{multi_restart, ParamSummary, RunAggregate};
pub use loss::{backprop, data_loss, gradient_check, loss, loss_value, Batch, FullBatch, GradCheck, LossBreakdown, LossGraph};
pub use points::{build_point_sets, DataPoint, PointConfig, PointSets};
pub use residual::{residual, Surrogate};
pub use train::{train_inverse, HistoryEntry, InferenceRun, ParamSet, StopCause, TrainConfig};

#[derive(Debug, Error)]
pub enum PinnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("beta is zero, the alpha*r1/beta coupling is undefined")]
    ZeroBeta,
    #[error("loss component {component} is not finite ({value})")]
    NonFiniteLoss { component: &'static str, value: f64 },
    #[error("non-finite gradient component {index} ({name})")]
    NonFiniteGradient { index: usize, name: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Grid(#[from] GridError),
}
