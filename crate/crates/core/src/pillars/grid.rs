use serde::{Deserialize, Serialize};

use super::PillarError;
use crate::cloud_io::CropBounds;

/// How the cell count is derived from extent / step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    /// Round to nearest, halves away from zero.
    #[default]
    Nearest,
    Floor,
}

/// Serialized form of the grid: extents, steps and encoder limits. Cell
/// counts are derived, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub x_step: f64,
    pub y_step: f64,
    pub ds_factor: usize,
    #[serde(default)]
    pub rounding: Rounding,
    pub max_pillars: usize,
    pub max_points_per_pillar: usize,
}

impl GridConfig {
    /// Full-size tunnel grid: 70 m ahead, ±39.68 m across, 0.16 m cells.
    pub fn tunnel() -> Self {
        Self {
            x_min: 0.0,
            x_max: 70.0,
            y_min: -39.68,
            y_max: 39.68,
            z_min: -7.0,
            z_max: 5.0,
            x_step: 0.16,
            y_step: 0.16,
            ds_factor: 2,
            rounding: Rounding::Nearest,
            max_pillars: 12000,
            max_points_per_pillar: 100,
        }
    }

    /// 20 m × 20 m at 0.25 m, sized for single-core training.
    pub fn desk() -> Self {
        Self {
            x_min: 0.0,
            x_max: 20.0,
            y_min: -10.0,
            y_max: 10.0,
            z_min: -2.0,
            z_max: 4.0,
            x_step: 0.25,
            y_step: 0.25,
            ds_factor: 2,
            rounding: Rounding::Nearest,
            max_pillars: 4000,
            max_points_per_pillar: 16,
        }
    }

    pub fn params(&self) -> Result<GridParams, PillarError> {
        GridParams::new(self)
    }
}

/// Validated grid geometry with derived cell counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridParams {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub x_step: f64,
    pub y_step: f64,
    pub ds_factor: usize,
    pub rounding: Rounding,
    /// Columns (pseudo-image width).
    pub x_n: usize,
    /// Rows (pseudo-image height).
    pub y_n: usize,
}

/// Cell count for one axis. The quotient is snapped to 1e-6 first so decimal
/// steps such as 0.16 do not land a hair below an exact half or integer.
fn cell_count(min: f64, max: f64, step: f64, rounding: Rounding) -> f64 {
    let q = ((max - min) / step * 1e6).round() / 1e6;
    match rounding {
        Rounding::Nearest => q.round(),
        Rounding::Floor => q.floor(),
    }
}

/// Pseudo-image width and height `(x_n, y_n)` for the given extents.
pub fn pseudo_image_dims(cfg: &GridConfig) -> Result<(usize, usize), PillarError> {
    for (name, step) in [("x_step", cfg.x_step), ("y_step", cfg.y_step)] {
        if !(step > 0.0 && step.is_finite()) {
            return Err(PillarError::Config(format!("{name} must be positive, got {step}")));
        }
    }
    for (axis, lo, hi) in [
        ('x', cfg.x_min, cfg.x_max),
        ('y', cfg.y_min, cfg.y_max),
        ('z', cfg.z_min, cfg.z_max),
    ] {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(PillarError::Config(format!("{axis} range [{lo}, {hi}) is empty")));
        }
    }
    let x_n = cell_count(cfg.x_min, cfg.x_max, cfg.x_step, cfg.rounding);
    let y_n = cell_count(cfg.y_min, cfg.y_max, cfg.y_step, cfg.rounding);
    if x_n < 1.0 || y_n < 1.0 {
        return Err(PillarError::Config(format!("grid has no cells ({x_n} x {y_n})")));
    }
    Ok((x_n as usize, y_n as usize))
}

impl GridParams {
    pub fn new(cfg: &GridConfig) -> Result<Self, PillarError> {
        let (x_n, y_n) = pseudo_image_dims(cfg)?;
        if cfg.ds_factor == 0 || x_n % cfg.ds_factor != 0 || y_n % cfg.ds_factor != 0 {
            return Err(PillarError::Config(format!(
                "ds_factor {} must divide the grid size {x_n} x {y_n}",
                cfg.ds_factor
            )));
        }
        if cfg.max_pillars == 0 || cfg.max_points_per_pillar == 0 {
            return Err(PillarError::Config("pillar limits must be positive".into()));
        }
        Ok(Self {
            x_min: cfg.x_min,
            x_max: cfg.x_max,
            y_min: cfg.y_min,
            y_max: cfg.y_max,
            z_min: cfg.z_min,
            z_max: cfg.z_max,
            x_step: cfg.x_step,
            y_step: cfg.y_step,
            ds_factor: cfg.ds_factor,
            rounding: cfg.rounding,
            x_n,
            y_n,
        })
    }

    /// Crop volume matching the grid. In floor mode the last partial cell is
    /// excluded so every surviving point maps to a valid cell.
    pub fn crop_bounds(&self) -> CropBounds {
        CropBounds {
            x_min: self.x_min,
            x_max: self.x_max.min(self.x_min + self.x_n as f64 * self.x_step),
            y_min: self.y_min,
            y_max: self.y_max.min(self.y_min + self.y_n as f64 * self.y_step),
            z_min: self.z_min,
            z_max: self.z_max,
        }
    }

    /// `(row, col)` of the BEV cell containing `(x, y)`, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = ((x - self.x_min) / self.x_step).floor();
        let row = ((y - self.y_min) / self.y_step).floor();
        if col >= 0.0 && row >= 0.0 && (col as usize) < self.x_n && (row as usize) < self.y_n {
            Some((row as usize, col as usize))
        } else {
            None
        }
    }

    /// Geometric center of a cell in the x-y plane.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x_min + (col as f64 + 0.5) * self.x_step,
            self.y_min + (row as f64 + 0.5) * self.y_step,
        )
    }

    /// Feature-map size after the backbone: `(height, width)`.
    pub fn feature_dims(&self) -> (usize, usize) {
        (self.y_n / self.ds_factor, self.x_n / self.ds_factor)
    }
}
