use serde::{Deserialize, Serialize};

use super::{require_positive, Cluster, ClusterConfigError};

/// Shape tests a UAV-like cluster must pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeuristicConfig {
    /// Expected box z-center, from the onboard altimeter, in the sensor frame.
    pub altimeter_height: f64,
    pub height_tolerance: f64,
    /// Minimum box volume, cubic meters.
    pub min_volume: f64,
    /// Largest allowed difference among the box length, width and height.
    pub max_aspect_diff: f64,
}

impl HeuristicConfig {
    pub fn validate(&self) -> Result<(), ClusterConfigError> {
        require_positive("height_tolerance", self.height_tolerance)?;
        require_positive("min_volume", self.min_volume)?;
        require_positive("max_aspect_diff", self.max_aspect_diff)?;
        if !self.altimeter_height.is_finite() {
            return Err(ClusterConfigError::NotPositive {
                name: "altimeter_height",
                value: self.altimeter_height,
            });
        }
        Ok(())
    }
}

pub fn passes_heuristics(c: &Cluster, cfg: &HeuristicConfig) -> bool {
    let b = &c.bbox;
    let height_ok = (b.z_ctr - cfg.altimeter_height).abs() <= cfg.height_tolerance;
    let volume_ok = b.volume() >= cfg.min_volume;
    let lens = [b.x_len, b.y_len, b.z_len];
    let spread = lens.iter().copied().fold(f64::MIN, f64::max) - lens.iter().copied().fold(f64::MAX, f64::min);
    height_ok && volume_ok && spread <= cfg.max_aspect_diff
}

/// Keeps the clusters passing all three tests, in input order.
pub fn apply_heuristics(clusters: Vec<Cluster>, cfg: &HeuristicConfig) -> Vec<Cluster> {
    clusters.into_iter().filter(|c| passes_heuristics(c, cfg)).collect()
}
