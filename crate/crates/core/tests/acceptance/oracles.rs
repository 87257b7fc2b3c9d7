use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uavloc_core::cluster::euclidean_cluster;
use uavloc_core::detector::{assign_targets, encode_box, nms, AnchorGrid, Label, NetworkConfig};
use uavloc_core::geometry::bev_iou;
use uavloc_core::pillars::GridConfig;
use uavloc_core::{Cuboid, Detection, LidarPoint, PointCloud};

use crate::Verdict;

/// Components of the all-pairs link graph, by repeated relabeling.
fn components(points: &[[f64; 3]], radius: f64, min_points: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut label: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                let d2: f64 = (0..3).map(|k| (points[i][k] - points[j][k]).powi(2)).sum();
                if d2 <= radius * radius && label[j] < label[i] {
                    label[i] = label[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if label[i] == i {
            let g: Vec<usize> = (0..n).filter(|&j| label[j] == i).collect();
            if g.len() >= min_points {
                groups.push(g);
            }
        }
    }
    groups
}

fn clustering(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let mut total = 0;
    for scene in 0..20 {
        let centers: Vec<[f64; 3]> = (0..rng.random_range(1..8))
            .map(|_| std::array::from_fn(|_| rng.random_range(-5.0..5.0)))
            .collect();
        let pts: Vec<LidarPoint> = (0..500)
            .map(|_| {
                let c = centers[rng.random_range(0..centers.len())];
                let spread = rng.random_range(0.2..1.5);
                let p: [f64; 3] = std::array::from_fn(|k| c[k] + rng.random_range(-spread..spread));
                LidarPoint::new(p[0] as f32, p[1] as f32, p[2] as f32, 0.0)
            })
            .collect();
        let cloud = PointCloud::new(pts, 0.0, "");
        let xyz: Vec<[f64; 3]> = cloud.points.iter().map(|p| p.xyz()).collect();
        let radius = rng.random_range(0.15..0.5);
        let min_points = rng.random_range(1..10);
        let got: Vec<Vec<usize>> = euclidean_cluster(&cloud, radius, min_points)
            .into_iter()
            .map(|c| c.point_indices)
            .collect();
        let want = components(&xyz, radius, min_points);
        if got != want {
            return Err(format!("scene {scene}: {} clusters, oracle {}", got.len(), want.len()));
        }
        total += got.len();
    }
    Ok(total)
}

/// Greedy suppression over a score-sorted list with per-box suppressed flags.
fn reference_nms(dets: &[Detection], iou: f64, score: f64) -> Vec<Detection> {
    let mut live: Vec<Detection> = dets
        .iter()
        .filter(|d| d.score >= score && d.bbox.validate().is_ok())
        .copied()
        .collect();
    // stable sort keeps the earlier box first on equal scores
    live.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut suppressed = vec![false; live.len()];
    let mut out = Vec::new();
    for i in 0..live.len() {
        if suppressed[i] {
            continue;
        }
        out.push(live[i]);
        for j in i + 1..live.len() {
            if bev_iou(&live[i].bbox, &live[j].bbox).unwrap() > iou {
                suppressed[j] = true;
            }
        }
    }
    out
}

fn random_box(rng: &mut ChaCha8Rng, spread: f64) -> Cuboid {
    Cuboid::new(
        [
            rng.random_range(-spread..spread),
            rng.random_range(-spread..spread),
            rng.random_range(0.0..2.0),
        ],
        [
            rng.random_range(0.3..1.5),
            rng.random_range(0.3..1.5),
            rng.random_range(0.2..0.6),
        ],
        rng.random_range(-3.2..3.2),
    )
}

fn suppression(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let mut kept = 0;
    for set in 0..20 {
        let dets: Vec<Detection> = (0..50)
            .map(|_| Detection {
                bbox: random_box(rng, 3.0),
                // coarse scores so ties happen
                score: (rng.random_range(0.0..1.0f64) * 20.0).round() / 20.0,
                class_id: 0,
            })
            .collect();
        let (iou, score) = (rng.random_range(0.1..0.7), rng.random_range(0.0..0.5));
        let got = nms(&dets, iou, score);
        if got != reference_nms(&dets, iou, score) {
            return Err(format!("set {set} differs"));
        }
        kept += got.len();
    }
    Ok(kept)
}

fn assignment(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let net = NetworkConfig::desk();
    let g = GridConfig::desk().params().unwrap();
    let anchors = AnchorGrid::new(&g, &net).map_err(|e| e.to_string())?.anchors;
    let mut positives = 0;
    for case in 0..10 {
        let truths: Vec<Cuboid> = (0..rng.random_range(0..4))
            .map(|_| {
                let mut c = random_box(rng, 1.0);
                c.x_ctr += rng.random_range(1.0..19.0);
                c.y_ctr += rng.random_range(-9.0..9.0);
                c
            })
            .collect();
        let iou: Vec<Vec<f64>> = anchors
            .iter()
            .map(|a| truths.iter().map(|t| bev_iou(a, t).unwrap()).collect())
            .collect();
        let column_max: Vec<f64> = (0..truths.len())
            .map(|j| iou.iter().map(|row| row[j]).fold(0.0, f64::max))
            .collect();
        let got = assign_targets(&anchors, &truths, &net).map_err(|e| e.to_string())?;
        for (i, row) in iou.iter().enumerate() {
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let best_j = row.iter().position(|&v| v == best);
            let forced = (0..truths.len()).any(|j| column_max[j] > 0.0 && row[j] == column_max[j]);
            let want = if forced || best >= net.match_iou_pos {
                Label::Positive
            } else if truths.is_empty() || best < net.match_iou_neg {
                Label::Negative
            } else {
                Label::Ignore
            };
            let want_match = (want == Label::Positive).then(|| best_j.unwrap());
            let want_res = want_match.map_or([0.0; 7], |j| encode_box(&truths[j], &anchors[i]));
            if got.labels[i] != want || got.matched[i] != want_match || got.residuals[i] != want_res {
                return Err(format!("case {case} anchor {i}: {:?}, oracle {want:?}", got.labels[i]));
            }
        }
        positives += got.num_positive();
    }
    Ok(positives)
}

pub fn all() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let result = (|| {
        let c = clustering(&mut rng)?;
        let k = suppression(&mut rng)?;
        let p = assignment(&mut rng)?;
        Ok::<_, String>(format!(
            "clustering 20 scenes ({c} clusters), nms 20 sets ({k} kept), assignment 10 cases ({p} positives), all exact"
        ))
    })();
    match result {
        Ok(d) => Verdict::new(true, d),
        Err(e) => Verdict::new(false, e),
    }
}
