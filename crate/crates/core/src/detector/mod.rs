//! Pillar-based single-shot detector: pillar feature net, strided conv
//! backbone with transposed-conv upsampling, and a 1×1 anchor head, trained
//! with a small reverse-mode differentiation tape.

mod anchors;
mod config;
mod detect;
mod gradcheck;
mod network;
mod nms;
pub mod scalar;
pub mod tape;
mod train;
mod weights;

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::pillars::PillarError;

pub use anchors::{assign_targets, decode_box, encode_box, AnchorGrid, RegressionTargets, BOX_CODE};
pub use config::{AnchorTemplate, BlockConfig, ClassLoss, LossConfig, NetworkConfig, TrainConfig};
pub use detect::{detect, DetectOutput, Detector};
pub use gradcheck::{gradient_check, GroupCheck};
pub use network::{batch_loss, forward, loss_and_gradients, parameter_leaves, training_loss, Forward};
pub use nms::nms;
pub use tape::Label;
pub use train::{encode_for_grid, train, train_with_progress, TrainOutput, TrainSample};
pub use weights::{parameter_layout, ModelWeights, Param};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("invalid detector config: {0}")]
    Config(String),
    #[error("bad weights: {0}")]
    Weights(String),
    #[error("training diverged in epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Pillars(#[from] PillarError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
