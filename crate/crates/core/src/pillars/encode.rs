use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GridParams, PillarError};
use crate::cloud_io::PointCloud;

/// Length of the per-point decoration `[x, y, z, r, x_c, y_c, z_c, x_p, y_p]`.
pub const POINT_FEATURES: usize = 9;

/// Dense pillar tensor: `P` pillars × `N` point slots × 9 features.
///
/// Pillars are ordered by `(row, col)`. Slots past a pillar's `count` are
/// all-zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarTensor {
    /// Row-major `[P][N][9]`.
    pub features: Vec<f64>,
    /// `(row, col)` cell of each pillar.
    pub indices: Vec<(u32, u32)>,
    /// Real points per pillar, `<= max_points`.
    pub counts: Vec<u32>,
    pub max_points: usize,
    pub x_n: usize,
    pub y_n: usize,
    /// Seed the tensor was sampled with.
    pub seed: u64,
}

impl PillarTensor {
    pub fn num_pillars(&self) -> usize {
        self.indices.len()
    }

    /// The 9-vector of slot `slot` in pillar `pillar`.
    pub fn point(&self, pillar: usize, slot: usize) -> &[f64] {
        let base = (pillar * self.max_points + slot) * POINT_FEATURES;
        &self.features[base..base + POINT_FEATURES]
    }

    pub fn total_points(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }

    pub fn empty(grid: &GridParams, max_points: usize, seed: u64) -> Self {
        Self {
            features: Vec::new(),
            indices: Vec::new(),
            counts: Vec::new(),
            max_points,
            x_n: grid.x_n,
            y_n: grid.y_n,
            seed,
        }
    }
}

/// Bucket a cropped cloud into BEV pillars and decorate every kept point.
///
/// Cells are `col = floor((x - x_min) / x_step)`, `row = floor((y - y_min) / y_step)`.
/// Over-full pillars keep a seeded uniform subsample of `max_points_per_pillar`
/// points (input order preserved); if more than `max_pillars` cells are
/// occupied a seeded subset of pillars is kept. The output depends only on
/// the inputs and `seed`.
pub fn encode_pillars(
    cloud: &PointCloud,
    grid: &GridParams,
    max_pillars: usize,
    max_points_per_pillar: usize,
    seed: u64,
) -> Result<PillarTensor, PillarError> {
    if max_pillars == 0 || max_points_per_pillar == 0 {
        return Err(PillarError::Config("pillar limits must be positive".into()));
    }
    let bounds = grid.crop_bounds();
    let mut keyed: Vec<(usize, usize)> = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points.iter().enumerate() {
        let cell = bounds
            .contains(p)
            .then(|| grid.cell_of(p.x as f64, p.y as f64))
            .flatten()
            .ok_or_else(|| PillarError::OutOfBounds {
                index: i,
                point: [p.x, p.y, p.z],
            })?;
        keyed.push((cell.0 * grid.x_n + cell.1, i));
    }
    keyed.sort_unstable();

    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (cell, i) in keyed {
        match groups.last_mut() {
            Some((c, members)) if *c == cell => members.push(i),
            _ => groups.push((cell, vec![i])),
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if groups.len() > max_pillars {
        let mut keep = sample(&mut rng, groups.len(), max_pillars).into_vec();
        keep.sort_unstable();
        groups = keep.into_iter().map(|k| std::mem::take(&mut groups[k])).collect();
    }

    let n = max_points_per_pillar;
    let mut out = PillarTensor::empty(grid, n, seed);
    out.features = vec![0.0; groups.len() * n * POINT_FEATURES];
    for (pi, (cell, members)) in groups.into_iter().enumerate() {
        let kept: Vec<usize> = if members.len() > n {
            let mut pick = sample(&mut rng, members.len(), n).into_vec();
            pick.sort_unstable();
            pick.into_iter().map(|k| members[k]).collect()
        } else {
            members
        };
        let (row, col) = (cell / grid.x_n, cell % grid.x_n);
        let (cx, cy) = grid.cell_center(row, col);

        let mut mean = [0.0; 3];
        for &i in &kept {
            let p = cloud.points[i].xyz();
            for k in 0..3 {
                mean[k] += p[k];
            }
        }
        let inv = 1.0 / kept.len() as f64;
        mean = mean.map(|s| s * inv);

        for (slot, &i) in kept.iter().enumerate() {
            let p = &cloud.points[i];
            let [x, y, z] = p.xyz();
            let base = (pi * n + slot) * POINT_FEATURES;
            out.features[base..base + POINT_FEATURES].copy_from_slice(&[
                x,
                y,
                z,
                p.r as f64,
                x - mean[0],
                y - mean[1],
                z - mean[2],
                x - cx,
                y - cy,
            ]);
        }
        out.indices.push((row as u32, col as u32));
        out.counts.push(kept.len() as u32);
    }
    Ok(out)
}
