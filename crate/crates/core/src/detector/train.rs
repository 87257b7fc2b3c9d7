use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::anchors::{assign_targets, AnchorGrid, RegressionTargets};
use super::config::{NetworkConfig, TrainConfig};
use super::network::loss_and_gradients;
use super::weights::ModelWeights;
use super::DetectorError;
use crate::cloud_io::{crop, LidarPoint, PointCloud};
use crate::geometry::Cuboid;
use crate::pillars::{encode_pillars, GridConfig, PillarTensor};

/// One frame with its truth boxes.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub cloud: PointCloud,
    pub truths: Vec<Cuboid>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub weights: ModelWeights<f32>,
    /// Mean mini-batch loss of every epoch.
    pub loss_trace: Vec<f64>,
}

/// ADAM moment estimates for every trainable parameter.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(w: &ModelWeights<f32>) -> Self {
        let zeros = || {
            w.params
                .iter()
                .map(|p| vec![0.0; if p.trainable { p.data.len() } else { 0 }])
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    fn update(&mut self, w: &mut ModelWeights<f32>, grads: &[Vec<f32>], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.gradient_decay, cfg.squared_gradient_decay);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for (pi, p) in w.params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            for (k, value) in p.data.iter_mut().enumerate() {
                let g = grads[pi][k] as f64;
                m[k] = b1 * m[k] + (1.0 - b1) * g;
                v[k] = b2 * v[k] + (1.0 - b2) * g * g;
                let step = lr * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.epsilon);
                *value = (*value as f64 - step) as f32;
            }
        }
    }
}

/// Crops and encodes a cloud the way the detector does.
pub fn encode_for_grid(cloud: &PointCloud, grid: &GridConfig, seed: u64) -> Result<PillarTensor, DetectorError> {
    let params = grid.params()?;
    let cropped = crop(cloud, &params.crop_bounds());
    Ok(encode_pillars(
        &cropped,
        &params,
        grid.max_pillars,
        grid.max_points_per_pillar,
        seed,
    )?)
}

/// Random mirror across `y = 0` and translation of a whole scene, boxes
/// included.
fn augment(sample: &TrainSample, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> (PointCloud, Vec<Cuboid>) {
    let mirror = cfg.augment_mirror && rng.random_bool(0.5);
    let shift: [f64; 3] = std::array::from_fn(|k| {
        let s = cfg.augment_shift[k];
        if s > 0.0 {
            rng.random_range(-s..=s)
        } else {
            0.0
        }
    });
    let sign = if mirror { -1.0 } else { 1.0 };
    let points = sample
        .cloud
        .points
        .iter()
        .map(|p| {
            let [x, y, z] = p.xyz();
            LidarPoint::new(
                (x + shift[0]) as f32,
                (sign * y + shift[1]) as f32,
                (z + shift[2]) as f32,
                p.r,
            )
        })
        .collect();
    let truths = sample
        .truths
        .iter()
        .map(|c| Cuboid {
            x_ctr: c.x_ctr + shift[0],
            y_ctr: sign * c.y_ctr + shift[1],
            z_ctr: c.z_ctr + shift[2],
            z_rot: sign * c.z_rot,
            ..*c
        })
        .collect();
    (sample.cloud.with_points(points), truths)
}

/// Trains from a seeded initialization with ADAM and a step learning-rate
/// schedule. `progress` sees each finished epoch and its mean loss.
///
/// Without augmentation every sample is encoded once; with it, each sample
/// is transformed, re-encoded and re-matched every epoch.
pub fn train_with_progress(
    samples: &[TrainSample],
    grid: &GridConfig,
    net: &NetworkConfig,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutput, DetectorError> {
    cfg.validate()?;
    net.validate()?;
    if samples.is_empty() {
        return Err(DetectorError::EmptyDataset);
    }
    let anchors = AnchorGrid::new(&grid.params()?, net)?;
    let augmenting = cfg.augments();
    let mut fixed = Vec::new();
    if !augmenting {
        for s in samples {
            let pillars = encode_for_grid(&s.cloud, grid, 0)?;
            let targets = assign_targets(&anchors.anchors, &s.truths, net)?;
            fixed.push((pillars, targets));
        }
    }
    let mut weights = ModelWeights::<f32>::init(net, cfg.seed)?;
    weights.metadata.insert("seed".into(), cfg.seed.to_string());
    weights.metadata.insert("epochs".into(), cfg.epochs.to_string());
    let mut adam = Adam::new(&weights);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa5a5_a5a5);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let momentum = net.bn_momentum;
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.mini_batch) {
            let mut fresh = Vec::new();
            if augmenting {
                for &i in chunk {
                    let (cloud, truths) = augment(&samples[i], cfg, &mut aug_rng);
                    let pillars = encode_for_grid(&cloud, grid, aug_rng.random())?;
                    let targets = assign_targets(&anchors.anchors, &truths, net)?;
                    fresh.push((pillars, targets));
                }
            }
            let items: Vec<&(PillarTensor, RegressionTargets)> = if augmenting {
                fresh.iter().collect()
            } else {
                chunk.iter().map(|&i| &fixed[i]).collect()
            };
            let batch: Vec<&PillarTensor> = items.iter().map(|t| &t.0).collect();
            let tgts: Vec<&RegressionTargets> = items.iter().map(|t| &t.1).collect();
            let (loss, grads, stats) = loss_and_gradients(&weights, &batch, &tgts, &anchors)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(DetectorError::Diverged { epoch, loss });
            }
            adam.update(&mut weights, &grads, lr, cfg);
            for (rm, s) in stats {
                for c in 0..s.mean.len() {
                    let m = &mut weights.params[rm].data[c];
                    *m = ((1.0 - momentum) * *m as f64 + momentum * s.mean[c]) as f32;
                    let v = &mut weights.params[rm + 1].data[c];
                    *v = ((1.0 - momentum) * *v as f64 + momentum * s.var[c]) as f32;
                }
            }
            sum += loss;
            batches += 1;
        }
        let mean = sum / batches as f64;
        log::debug!("epoch {epoch}: lr {lr:.3e} loss {mean:.5}");
        progress(epoch, mean);
        trace.push(mean);
    }
    Ok(TrainOutput {
        weights,
        loss_trace: trace,
    })
}

pub fn train(
    samples: &[TrainSample],
    grid: &GridConfig,
    net: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutput, DetectorError> {
    train_with_progress(samples, grid, net, cfg, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_sample() -> TrainSample {
        let center = [6.1, 0.3, 1.0];
        let mut pts = Vec::new();
        for i in 0..40 {
            let f = i as f32 / 40.0;
            pts.push(LidarPoint::new(
                center[0] as f32 - 0.25 + 0.5 * f,
                center[1] as f32 + if i % 2 == 0 { 0.25 } else { -0.25 },
                center[2] as f32 + 0.15 * (f - 0.5),
                5.0,
            ));
        }
        for i in 0..200 {
            pts.push(LidarPoint::new(i as f32 * 0.1, 3.0, 0.0, 1.0));
        }
        TrainSample {
            cloud: PointCloud::new(pts, 0.0, ""),
            truths: vec![Cuboid::new(center, [0.5, 0.5, 0.3], 0.0)],
        }
    }

    fn plain(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            learning_rate: 2e-3,
            augment_shift: [0.0; 3],
            augment_mirror: false,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn overfits_one_sample_and_is_deterministic() {
        let g = GridConfig::desk();
        let net = NetworkConfig::desk();
        let data = vec![tiny_sample()];
        let a = train(&data, &g, &net, &plain(200)).unwrap();
        let first = a.loss_trace[0];
        let last = *a.loss_trace.last().unwrap();
        assert!(last < 0.1 * first, "loss {first} -> {last}");
        let b = train(&data, &g, &net, &plain(3)).unwrap();
        let c = train(&data, &g, &net, &plain(3)).unwrap();
        assert_eq!(b.weights, c.weights);
        let aug = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let d = train(&data, &g, &net, &aug).unwrap();
        assert_eq!(d.weights, train(&data, &g, &net, &aug).unwrap().weights);
        assert_ne!(d.weights, b.weights);
    }

    #[test]
    fn augmentation_moves_points_and_boxes_together() {
        let s = tiny_sample();
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (cloud, truths) = augment(&s, &cfg, &mut rng);
            // points sit on the box faces, so allow for f32 rounding
            let inside =
                |c: &PointCloud, b: &Cuboid| c.points.iter().filter(|p| b.inflated(1e-4).contains(p.xyz())).count();
            assert_eq!(inside(&cloud, &truths[0]), inside(&s.cloud, &s.truths[0]));
            let dz = truths[0].z_ctr - s.truths[0].z_ctr;
            assert!(dz.abs() <= cfg.augment_shift[2]);
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(
            train(
                &[],
                &GridConfig::desk(),
                &NetworkConfig::desk(),
                &TrainConfig::default()
            ),
            Err(DetectorError::EmptyDataset)
        ));
    }

    #[test]
    fn divergence_names_the_epoch() {
        let mut s = tiny_sample();
        s.cloud.points[0].r = f32::MAX;
        let net = NetworkConfig {
            batch_norm: false,
            ..NetworkConfig::desk()
        };
        let err = train(&[s], &GridConfig::desk(), &net, &plain(2)).unwrap_err();
        assert!(matches!(err, DetectorError::Diverged { epoch: 0, .. }), "{err:?}");
    }
}
