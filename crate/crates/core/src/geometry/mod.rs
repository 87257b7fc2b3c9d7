//! Oriented cuboids, BEV overlap and the 3D position-error metric.
//!
//! Rotations are intrinsic yaw about +z. `x_rot` and `y_rot` are carried
//! through label files but every geometric operation requires them to be zero.

mod estimates;
mod iou;
mod labels;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use estimates::{parse_estimates, write_estimates};
pub use iou::{bev_iou, convex_polygon_area, footprint, polygon_intersection_area};
pub use labels::{parse_labels, write_labels, AngleUnit, LabelRow};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate cuboid: {0}")]
    Degenerate(String),
    #[error("roll/pitch rotation is not supported (x_rot {x_rot}, y_rot {y_rot})")]
    NotYawOnly { x_rot: f64, y_rot: f64 },
}

/// Oriented box in the nine-element `[center, lengths, rotations]` layout.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Cuboid {
    pub x_ctr: f64,
    pub y_ctr: f64,
    pub z_ctr: f64,
    pub x_len: f64,
    pub y_len: f64,
    pub z_len: f64,
    pub x_rot: f64,
    pub y_rot: f64,
    pub z_rot: f64,
}

impl Cuboid {
    pub fn new(center: [f64; 3], lengths: [f64; 3], yaw: f64) -> Self {
        Self {
            x_ctr: center[0],
            y_ctr: center[1],
            z_ctr: center[2],
            x_len: lengths[0],
            y_len: lengths[1],
            z_len: lengths[2],
            x_rot: 0.0,
            y_rot: 0.0,
            z_rot: yaw,
        }
    }

    pub fn from_array(v: [f64; 9]) -> Self {
        Self {
            x_ctr: v[0],
            y_ctr: v[1],
            z_ctr: v[2],
            x_len: v[3],
            y_len: v[4],
            z_len: v[5],
            x_rot: v[6],
            y_rot: v[7],
            z_rot: v[8],
        }
    }

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.x_ctr, self.y_ctr, self.z_ctr, self.x_len, self.y_len, self.z_len, self.x_rot, self.y_rot, self.z_rot,
        ]
    }

    pub fn center(&self) -> [f64; 3] {
        [self.x_ctr, self.y_ctr, self.z_ctr]
    }

    pub fn volume(&self) -> f64 {
        self.x_len * self.y_len * self.z_len
    }

    /// Checks positive finite lengths and yaw-only rotation.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let v = self.to_array();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::Degenerate(format!("non-finite component in {v:?}")));
        }
        if self.x_len <= 0.0 || self.y_len <= 0.0 || self.z_len <= 0.0 {
            return Err(GeometryError::Degenerate(format!(
                "lengths must be positive, got ({}, {}, {})",
                self.x_len, self.y_len, self.z_len
            )));
        }
        if self.x_rot != 0.0 || self.y_rot != 0.0 {
            return Err(GeometryError::NotYawOnly {
                x_rot: self.x_rot,
                y_rot: self.y_rot,
            });
        }
        Ok(())
    }

    /// True when `p` lies inside the (closed) box.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let (s, c) = self.z_rot.sin_cos();
        let dx = p[0] - self.x_ctr;
        let dy = p[1] - self.y_ctr;
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        let lz = p[2] - self.z_ctr;
        lx.abs() <= self.x_len / 2.0 && ly.abs() <= self.y_len / 2.0 && lz.abs() <= self.z_len / 2.0
    }

    pub fn inflated(&self, margin: f64) -> Self {
        Self {
            x_len: self.x_len + 2.0 * margin,
            y_len: self.y_len + 2.0 * margin,
            z_len: self.z_len + 2.0 * margin,
            ..*self
        }
    }
}

/// The 8 corners of the yaw-rotated box: bottom face first, counter-clockwise.
pub fn cuboid_corners(c: &Cuboid) -> [[f64; 3]; 8] {
    let (s, co) = c.z_rot.sin_cos();
    let hx = c.x_len / 2.0;
    let hy = c.y_len / 2.0;
    let hz = c.z_len / 2.0;
    let mut out = [[0.0; 3]; 8];
    let signs = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    for (level, sz) in [-1.0, 1.0].into_iter().enumerate() {
        for (i, (sx, sy)) in signs.iter().enumerate() {
            let lx = sx * hx;
            let ly = sy * hy;
            out[level * 4 + i] = [
                c.x_ctr + co * lx - s * ly,
                c.y_ctr + s * lx + co * ly,
                c.z_ctr + sz * hz,
            ];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Clustering,
    Network,
    Truth,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Clustering => "clustering",
            Source::Network => "network",
            Source::Truth => "truth",
        })
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clustering" => Ok(Source::Clustering),
            "network" => Ok(Source::Network),
            "truth" => Ok(Source::Truth),
            other => Err(format!("unknown source {other:?}")),
        }
    }
}

/// Relative UAV position in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionEstimate {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub timestamp: f64,
    pub source: Source,
}

impl PositionEstimate {
    pub fn new(p: [f64; 3], timestamp: f64, source: Source) -> Self {
        Self {
            x: p[0],
            y: p[1],
            z: p[2],
            timestamp,
            source,
        }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// A scored box from either localizer. Single class: UAV is `class_id` 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: Cuboid,
    pub score: f64,
    pub class_id: u32,
}

/// Euclidean distance between the two positions, in meters.
pub fn position_error(predicted: &PositionEstimate, truth: &PositionEstimate) -> f64 {
    let dx = predicted.x - truth.x;
    let dy = predicted.y - truth.y;
    let dz = predicted.z - truth.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}
