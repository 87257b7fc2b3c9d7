//! Bird's-eye-view pillar grid: cell geometry, point bucketing with the
//! nine-value decoration, and the scatter back into a dense pseudo-image.

mod dump;
mod encode;
mod grid;
mod scatter;

use thiserror::Error;

pub use dump::{read_pillar_dump, write_pillar_dump, DumpError};
pub use encode::{encode_pillars, PillarTensor, POINT_FEATURES};
pub use grid::{pseudo_image_dims, GridConfig, GridParams, Rounding};
pub use scatter::{scatter, PseudoImage};

#[derive(Debug, Error, PartialEq)]
pub enum PillarError {
    #[error("invalid grid: {0}")]
    Config(String),
    #[error("point {index} at {point:?} lies outside the grid")]
    OutOfBounds { index: usize, point: [f32; 3] },
    #[error("{0}")]
    Contract(String),
}
