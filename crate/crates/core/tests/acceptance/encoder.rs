use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uavloc_core::pillars::{encode_pillars, GridConfig, GridParams};
use uavloc_core::{LidarPoint, PointCloud};

use crate::Verdict;

/// Cell of a point by scanning the cell edges one by one.
fn brute_cell(g: &GridParams, x: f64, y: f64) -> (usize, usize) {
    let col = (1..g.x_n).filter(|&k| g.x_min + k as f64 * g.x_step <= x).count();
    let row = (1..g.y_n).filter(|&k| g.y_min + k as f64 * g.y_step <= y).count();
    (row, col)
}

fn random_cloud(rng: &mut ChaCha8Rng, g: &GridParams) -> PointCloud {
    let bounds = g.crop_bounds();
    let n = rng.random_range(1..=10_000);
    // a few dense blobs on top of a uniform background
    let blobs: Vec<[f64; 3]> = (0..rng.random_range(0..5))
        .map(|_| {
            [
                rng.random_range(bounds.x_min..bounds.x_max),
                rng.random_range(bounds.y_min..bounds.y_max),
                rng.random_range(bounds.z_min..bounds.z_max),
            ]
        })
        .collect();
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let p = if !blobs.is_empty() && rng.random_bool(0.5) {
            let b = blobs[rng.random_range(0..blobs.len())];
            [
                b[0] + rng.random_range(-0.4..0.4),
                b[1] + rng.random_range(-0.4..0.4),
                b[2] + rng.random_range(-0.4..0.4),
            ]
        } else {
            [
                rng.random_range(bounds.x_min..bounds.x_max),
                rng.random_range(bounds.y_min..bounds.y_max),
                rng.random_range(bounds.z_min..bounds.z_max),
            ]
        };
        let lp = LidarPoint::new(p[0] as f32, p[1] as f32, p[2] as f32, rng.random_range(0.0..255.0));
        if bounds.contains(&lp) {
            pts.push(lp);
        }
    }
    PointCloud::new(pts, 0.0, "")
}

/// Checks one cloud; `Err` describes the first violation.
fn check(cloud: &PointCloud, g: &GridParams, seed: u64) -> Result<f64, String> {
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        cells.entry(brute_cell(g, p.x as f64, p.y as f64)).or_default().push(i);
    }
    let fullest = cells.values().map(Vec::len).max().unwrap_or(1);
    let t = encode_pillars(cloud, g, g.x_n * g.y_n, fullest, seed).map_err(|e| e.to_string())?;
    if t.total_points() != cloud.len() {
        return Err(format!("{} points in, {} in pillars", cloud.len(), t.total_points()));
    }
    if t.num_pillars() != cells.len() {
        return Err(format!("{} pillars, oracle has {}", t.num_pillars(), cells.len()));
    }
    let mut worst = 0.0f64;
    for (pi, ((cell, members), &(row, col))) in cells.iter().zip(&t.indices).enumerate() {
        if *cell != (row as usize, col as usize) {
            return Err(format!("pillar {pi} at {:?}, oracle {cell:?}", (row, col)));
        }
        if t.counts[pi] as usize != members.len() {
            return Err(format!("pillar {pi} holds {}, oracle {}", t.counts[pi], members.len()));
        }
        let (cx, cy) = (
            g.x_min + (cell.1 as f64 + 0.5) * g.x_step,
            g.y_min + (cell.0 as f64 + 0.5) * g.y_step,
        );
        let mut offsets = [0.0; 3];
        for (slot, &i) in members.iter().enumerate() {
            let f = t.point(pi, slot);
            let p = &cloud.points[i];
            let raw = [p.x as f64, p.y as f64, p.z as f64, p.r as f64];
            if f[..4].iter().zip(raw).any(|(a, b)| a.to_bits() != b.to_bits()) {
                return Err(format!("pillar {pi} slot {slot} is not point {i}"));
            }
            if (f[7] - (raw[0] - cx)).abs() > 1e-12 || (f[8] - (raw[1] - cy)).abs() > 1e-12 {
                return Err(format!("pillar {pi} slot {slot}: bad cell-center offset"));
            }
            for k in 0..3 {
                offsets[k] += f[4 + k];
            }
        }
        for s in offsets {
            worst = worst.max(s.abs());
        }
        for slot in members.len()..t.max_points {
            if t.point(pi, slot).iter().any(|&v| v != 0.0) {
                return Err(format!("pillar {pi} slot {slot}: padding is not zero"));
            }
        }
    }
    if worst > 1e-9 {
        return Err(format!("centroid offsets sum to {worst:.2e}"));
    }
    Ok(worst)
}

pub fn conservation() -> Verdict {
    let g = GridConfig::desk().params().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut points = 0;
    for k in 0..100 {
        let cloud = random_cloud(&mut rng, &g);
        points += cloud.len();
        match check(&cloud, &g, k) {
            Ok(w) => worst = worst.max(w),
            Err(e) => return Verdict::new(false, format!("cloud {k}: {e}")),
        }
    }
    Verdict::new(
        true,
        format!("100 clouds, {points} points conserved, bucketing matches, offset sums ≤ {worst:.1e} (≤ 1e-9)"),
    )
}
