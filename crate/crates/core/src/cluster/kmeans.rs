//! Lloyd's k-means with k-means++ seeding, exposed behind the same
//! [`Cluster`] interface as the Euclidean mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Cluster;
use crate::cloud_io::PointCloud;

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

pub fn kmeans_cluster(cloud: &PointCloud, k: usize, iterations: usize, min_points: usize, seed: u64) -> Vec<Cluster> {
    let idx: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.points[i].is_finite()).collect();
    if idx.is_empty() || k == 0 {
        return Vec::new();
    }
    let pts: Vec<[f64; 3]> = idx.iter().map(|&i| cloud.points[i].xyz()).collect();
    let k = k.min(pts.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = vec![pts[rng.random_range(0..pts.len())]];
    let mut nearest: Vec<f64> = pts.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            nearest
                .iter()
                .position(|&d| {
                    target -= d;
                    target < 0.0
                })
                .unwrap_or(pts.len() - 1)
        } else {
            rng.random_range(0..pts.len())
        };
        centers.push(pts[next]);
        for (d, p) in nearest.iter_mut().zip(&pts) {
            *d = d.min(dist2(p, &centers[centers.len() - 1]));
        }
    }

    let mut assign = vec![usize::MAX; pts.len()];
    for _ in 0..iterations.max(1) {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(&pts) {
            let best = (0..k)
                .min_by(|&i, &j| dist2(p, &centers[i]).total_cmp(&dist2(p, &centers[j])))
                .unwrap();
            changed |= *a != best;
            *a = best;
        }
        let mut sums = vec![[0.0; 3]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(&pts) {
            counts[a] += 1;
            for d in 0..3 {
                sums[a][d] += p[d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].map(|s| s / counts[c] as f64);
            }
        }
        if !changed {
            break;
        }
    }

    let mut groups = vec![Vec::new(); k];
    for (&a, &i) in assign.iter().zip(&idx) {
        groups[a].push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups
        .into_iter()
        .filter(|g| !g.is_empty() && g.len() >= min_points)
        .collect();
    groups.sort_by_key(|g| g[0]);
    groups
        .into_iter()
        .map(|g| Cluster::from_indices(&cloud.points, g))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud_io::LidarPoint;

    #[test]
    fn separates_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pts = Vec::new();
        for c in [0.0f32, 20.0] {
            for _ in 0..40 {
                pts.push(LidarPoint::new(
                    c + rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    0.0,
                    0.0,
                ));
            }
        }
        let cloud = PointCloud::new(pts, 0.0, "");
        let clusters = kmeans_cluster(&cloud, 2, 20, 1, 4);
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters.iter().map(Cluster::len).sum::<usize>(), 80);
        for c in &clusters {
            assert!(c.bbox.x_len < 1.0);
        }
        assert_eq!(kmeans_cluster(&cloud, 2, 20, 1, 4), clusters);
    }

    #[test]
    fn empty_and_oversized_k() {
        let empty = PointCloud::default();
        assert!(kmeans_cluster(&empty, 3, 10, 1, 0).is_empty());
        let one = PointCloud::new(vec![LidarPoint::new(1.0, 1.0, 1.0, 0.0)], 0.0, "");
        assert_eq!(kmeans_cluster(&one, 5, 10, 1, 0).len(), 1);
    }
}
