//! Distance-threshold clustering: connected components of the graph linking
//! every pair of points within `link_radius`, found with a uniform hash grid
//! (cell side = `link_radius`) and union-find.

use std::collections::HashMap;

use super::Cluster;
use crate::cloud_io::PointCloud;

pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub(crate) fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Groups the union-find roots into clusters of at least `min_points`,
/// ordered by their smallest point index.
pub(crate) fn collect_components(
    cloud: &PointCloud,
    members: &[usize],
    uf: &mut UnionFind,
    min_points: usize,
) -> Vec<Cluster> {
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for &i in members {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    let mut comps: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() >= min_points.max(1)).collect();
    // members are visited in ascending order, so each group is already sorted
    comps.sort_by_key(|g| g[0]);
    comps
        .into_iter()
        .map(|g| Cluster::from_indices(&cloud.points, g))
        .collect()
}

pub fn euclidean_cluster(cloud: &PointCloud, link_radius: f64, min_points: usize) -> Vec<Cluster> {
    assert!(link_radius > 0.0, "link_radius must be positive");
    let pts: Vec<[f64; 3]> = cloud.points.iter().map(|p| p.xyz()).collect();
    let finite: Vec<usize> = (0..pts.len()).filter(|&i| cloud.points[i].is_finite()).collect();

    let key = |p: &[f64; 3]| -> (i64, i64, i64) {
        (
            (p[0] / link_radius).floor() as i64,
            (p[1] / link_radius).floor() as i64,
            (p[2] / link_radius).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for &i in &finite {
        grid.entry(key(&pts[i])).or_default().push(i);
    }

    let r2 = link_radius * link_radius;
    let mut uf = UnionFind::new(pts.len());
    for &i in &finite {
        let (cx, cy, cz) = key(&pts[i]);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(cell) = grid.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &j in cell {
                        if j <= i {
                            continue;
                        }
                        let d2 = (pts[i][0] - pts[j][0]).powi(2)
                            + (pts[i][1] - pts[j][1]).powi(2)
                            + (pts[i][2] - pts[j][2]).powi(2);
                        if d2 <= r2 {
                            uf.union(i, j);
                        }
                    }
                }
            }
        }
    }
    collect_components(cloud, &finite, &mut uf, min_points)
}
