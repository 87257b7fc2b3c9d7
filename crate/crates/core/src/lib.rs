//! UAV localization in LiDAR point clouds.
//!
//! Two localizers share one set of data types:
//!
//! * [`cluster`]: range-shell segmentation, Euclidean clustering and shape
//!   heuristics, with an optional velocity gate.
//! * [`detector`]: a small pillar-based single-shot 3D detector with its own
//!   reverse-mode differentiation and ADAM training loop.
//!
//! [`eval`] scores either localizer against a reference trajectory, and
//! [`synth`] generates tunnel flights with exact ground truth so every stage
//! can be exercised without recorded data.

pub mod cloud_io;
pub mod cluster;
pub mod config;
pub mod detector;
pub mod eval;
pub mod geometry;
pub mod pillars;
pub mod synth;
pub mod text;

pub use cloud_io::{CropBounds, LidarPoint, PointCloud};
pub use geometry::{Cuboid, Detection, PositionEstimate, Source};
