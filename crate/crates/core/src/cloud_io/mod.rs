//! Point-cloud types, PCD reading/writing, cropping and dataset manifests.

mod manifest;
mod pcd;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::{parse_manifest, write_manifest, ManifestEntry};
pub use pcd::{parse_pcd, read_pcd_file, to_pcd_bytes, write_pcd, BodyUnit, PcdEncoding, PcdError};

/// One LiDAR return in the sensor frame. Coordinates in meters, `r` is the
/// raw intensity and is passed through untouched.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LidarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub r: f32,
}

impl LidarPoint {
    pub fn new(x: f32, y: f32, z: f32, r: f32) -> Self {
        Self { x, y, z, r }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.r.is_finite()
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }

    /// Distance from the sensor origin.
    pub fn range(&self) -> f64 {
        let [x, y, z] = self.xyz();
        (x * x + y * y + z * z).sqrt()
    }

    fn bits(&self) -> [u32; 4] {
        [self.x.to_bits(), self.y.to_bits(), self.z.to_bits(), self.r.to_bits()]
    }
}

/// An unorganized scan. Immutable once built; share freely across threads.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
    /// Seconds, monotonic epoch time.
    pub timestamp: f64,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<LidarPoint>, timestamp: f64, frame_id: impl Into<String>) -> Self {
        Self {
            points,
            timestamp,
            frame_id: frame_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same metadata, different points.
    pub fn with_points(&self, points: Vec<LidarPoint>) -> Self {
        Self {
            points,
            timestamp: self.timestamp,
            frame_id: self.frame_id.clone(),
        }
    }

    /// Field-for-field equality on the bit patterns, so NaN payloads compare too.
    pub fn bitwise_eq(&self, other: &PointCloud) -> bool {
        self.timestamp.to_bits() == other.timestamp.to_bits()
            && self.frame_id == other.frame_id
            && self.points.len() == other.points.len()
            && self.points.iter().zip(&other.points).all(|(a, b)| a.bits() == b.bits())
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid crop bounds on {axis}: min {min} must be below max {max}")]
pub struct BoundsError {
    pub axis: char,
    pub min: f64,
    pub max: f64,
}

/// Axis-aligned crop volume with half-open `[min, max)` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl CropBounds {
    pub fn new(x: (f64, f64), y: (f64, f64), z: (f64, f64)) -> Result<Self, BoundsError> {
        let b = Self {
            x_min: x.0,
            x_max: x.1,
            y_min: y.0,
            y_max: y.1,
            z_min: z.0,
            z_max: z.1,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), BoundsError> {
        for (axis, min, max) in [
            ('x', self.x_min, self.x_max),
            ('y', self.y_min, self.y_max),
            ('z', self.z_min, self.z_max),
        ] {
            // written so NaN bounds fail too
            if !(min < max) {
                return Err(BoundsError { axis, min, max });
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &LidarPoint) -> bool {
        if !p.is_finite() {
            return false;
        }
        let [x, y, z] = p.xyz();
        self.x_min <= x && x < self.x_max && self.y_min <= y && y < self.y_max && self.z_min <= z && z < self.z_max
    }
}

/// Keep the finite points inside `bounds`, in their original order.
pub fn crop(cloud: &PointCloud, bounds: &CropBounds) -> PointCloud {
    cloud.with_points(cloud.points.iter().filter(|p| bounds.contains(p)).copied().collect())
}
