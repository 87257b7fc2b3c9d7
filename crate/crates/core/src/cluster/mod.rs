//! The clustering baseline: keep a spherical shell around the UWB range,
//! split it into clusters, filter those with shape heuristics and report the
//! surviving box center. A velocity gate can reject implausible jumps.

mod euclidean;
mod gate;
mod heuristics;
mod kmeans;
mod range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud_io::{LidarPoint, PointCloud};
use crate::geometry::{Cuboid, PositionEstimate, Source};

pub use euclidean::euclidean_cluster;
pub use gate::{velocity_gate, GateDecision, GateError, VelocityGateState};
pub use heuristics::{apply_heuristics, passes_heuristics, HeuristicConfig};
pub use kmeans::kmeans_cluster;
pub use range::{parse_ranges, write_ranges, RangeSample};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterConfigError {
    #[error("{name} must be positive, got {value}")]
    NotPositive { name: &'static str, value: f64 },
}

pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<(), ClusterConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ClusterConfigError::NotPositive { name, value })
    }
}

/// Hollow sphere around the measured range: `[max(range - margin, 0), range + margin]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShellParams {
    pub range: f64,
    pub margin: f64,
}

impl ShellParams {
    pub const DEFAULT_MARGIN: f64 = 2.0;

    pub fn new(range: f64, margin: f64) -> Result<Self, ClusterConfigError> {
        require_positive("range", range)?;
        require_positive("margin", margin)?;
        Ok(Self { range, margin })
    }

    pub fn inner(&self) -> f64 {
        (self.range - self.margin).max(0.0)
    }

    pub fn outer(&self) -> f64 {
        self.range + self.margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    Euclidean,
    Kmeans,
}

/// How the shell is split into candidate clusters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub method: ClusterMethod,
    /// Linking distance for Euclidean clustering, meters.
    pub link_radius: f64,
    pub min_points: usize,
    /// Cluster count for k-means mode.
    pub k: usize,
    pub kmeans_iterations: usize,
    pub seed: u64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            method: ClusterMethod::Euclidean,
            link_radius: 0.3,
            min_points: 5,
            k: 8,
            kmeans_iterations: 50,
            seed: 0,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), ClusterConfigError> {
        require_positive("link_radius", self.link_radius)?;
        require_positive("min_points", self.min_points as f64)?;
        if self.method == ClusterMethod::Kmeans {
            require_positive("k", self.k as f64)?;
        }
        Ok(())
    }
}

/// A group of points from one cloud with its tight axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Ascending indices into the source cloud.
    pub point_indices: Vec<usize>,
    pub bbox: Cuboid,
    pub centroid: [f64; 3],
}

impl Cluster {
    /// Builds the box and centroid for `indices` (ascending, non-empty).
    pub fn from_indices(points: &[LidarPoint], indices: Vec<usize>) -> Self {
        debug_assert!(!indices.is_empty());
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut sum = [0.0; 3];
        for &i in &indices {
            let p = points[i].xyz();
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
                sum[k] += p[k];
            }
        }
        let n = indices.len() as f64;
        Self {
            bbox: Cuboid::new(
                std::array::from_fn(|k| (lo[k] + hi[k]) / 2.0),
                std::array::from_fn(|k| hi[k] - lo[k]),
                0.0,
            ),
            centroid: sum.map(|s| s / n),
            point_indices: indices,
        }
    }

    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }
}

/// Points whose distance from the sensor origin falls inside the shell.
pub fn shell_segment(cloud: &PointCloud, shell: &ShellParams) -> PointCloud {
    let (inner, outer) = (shell.inner(), shell.outer());
    cloud.with_points(
        cloud
            .points
            .iter()
            .filter(|p| {
                let r = p.range();
                inner <= r && r <= outer
            })
            .copied()
            .collect(),
    )
}

pub fn cluster_cloud(cloud: &PointCloud, params: &ClusterParams) -> Vec<Cluster> {
    match params.method {
        ClusterMethod::Euclidean => euclidean_cluster(cloud, params.link_radius, params.min_points),
        ClusterMethod::Kmeans => kmeans_cluster(
            cloud,
            params.k,
            params.kmeans_iterations,
            params.min_points,
            params.seed,
        ),
    }
}

/// Shell → clusters → heuristics → one position.
///
/// With several survivors, the one whose centroid range is closest to the
/// measured range wins (earlier cluster on an exact tie).
pub fn localize_clustering(
    cloud: &PointCloud,
    shell: &ShellParams,
    heuristics: &HeuristicConfig,
    params: &ClusterParams,
) -> Option<PositionEstimate> {
    let segmented = shell_segment(cloud, shell);
    let survivors = apply_heuristics(cluster_cloud(&segmented, params), heuristics);
    let range_gap = |c: &Cluster| {
        let [x, y, z] = c.centroid;
        ((x * x + y * y + z * z).sqrt() - shell.range).abs()
    };
    let best = survivors
        .iter()
        .reduce(|best, c| if range_gap(c) < range_gap(best) { c } else { best })?;
    Some(PositionEstimate::new(
        best.bbox.center(),
        cloud.timestamp,
        Source::Clustering,
    ))
}
