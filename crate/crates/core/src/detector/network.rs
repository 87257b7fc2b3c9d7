//! Forward pass: pillar feature net → scatter → conv backbone → anchor head.

use super::anchors::{AnchorGrid, BOX_CODE};
use super::config::{ClassLoss, NetworkConfig};
use super::scalar::Scalar;
use super::tape::{BatchStats, ClassLossParams, Label, Tape, Tensor, Var};
use super::weights::ModelWeights;
use super::{DetectorError, RegressionTargets};
use crate::pillars::{PillarTensor, POINT_FEATURES};

/// Head outputs of one forward pass.
pub struct Forward {
    /// Logits, `(B, A, H, W)`.
    pub cls: Var,
    /// Box residuals, `(B, 7A, H, W)`.
    pub reg: Var,
    /// Train-mode batch statistics keyed by the index of the layer's
    /// `running_mean` parameter (`running_var` follows it).
    pub stats: Vec<(usize, BatchStats)>,
}

/// One tape leaf per parameter; only trainable ones get gradients, and only
/// when `train` is set.
pub fn parameter_leaves<T: Scalar>(tape: &mut Tape<T>, weights: &ModelWeights<T>, train: bool) -> Vec<Var> {
    weights
        .params
        .iter()
        .map(|p| tape.leaf(Tensor::new(p.shape.clone(), p.data.clone()), train && p.trainable))
        .collect()
}

struct Net<'a, T: Scalar> {
    tape: &'a mut Tape<T>,
    weights: &'a ModelWeights<T>,
    leaves: &'a [Var],
    train: bool,
    stats: Vec<(usize, BatchStats)>,
}

impl<T: Scalar> Net<'_, T> {
    fn param(&self, name: &str) -> Var {
        self.maybe(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    fn maybe(&self, name: &str) -> Option<Var> {
        self.weights.index_of(name).map(|i| self.leaves[i])
    }

    /// Batch norm (when enabled) followed by ReLU.
    fn norm_relu(&mut self, x: Var, prefix: &str) -> Var {
        let net = &self.weights.config;
        let y = if net.batch_norm {
            let gamma = self.param(&format!("{prefix}.bn.gamma"));
            let beta = self.param(&format!("{prefix}.bn.beta"));
            let rm = self
                .weights
                .index_of(&format!("{prefix}.bn.running_mean"))
                .expect("running mean");
            let (y, stats) = if self.train {
                self.tape.batch_norm(x, gamma, beta, None, net.bn_eps)
            } else {
                let (m, v) = (&self.weights.params[rm].data, &self.weights.params[rm + 1].data);
                self.tape.batch_norm(x, gamma, beta, Some((m, v)), net.bn_eps)
            };
            if let Some(s) = stats {
                self.stats.push((rm, s));
            }
            y
        } else {
            x
        };
        self.tape.relu(y)
    }
}

/// Runs the network on a batch of pillar tensors sharing one grid.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    weights: &ModelWeights<T>,
    leaves: &[Var],
    batch: &[&PillarTensor],
    train: bool,
) -> Result<Forward, DetectorError> {
    let net_cfg: &NetworkConfig = &weights.config;
    let first = batch
        .first()
        .ok_or_else(|| DetectorError::Contract("empty batch".into()))?;
    let (h, w) = (first.y_n, first.x_n);
    let total = net_cfg.total_stride();
    if h % total != 0 || w % total != 0 {
        return Err(DetectorError::Config(format!(
            "pseudo-image {h} x {w} not divisible by backbone stride {total}"
        )));
    }
    let mut features = Vec::new();
    let mut lengths = Vec::new();
    let mut slots = Vec::new();
    for (b, t) in batch.iter().enumerate() {
        if (t.y_n, t.x_n) != (h, w) {
            return Err(DetectorError::Contract("batch mixes grid sizes".into()));
        }
        for p in 0..t.num_pillars() {
            let count = t.counts[p] as usize;
            for s in 0..count {
                features.extend(t.point(p, s).iter().map(|&v| T::of(v)));
            }
            lengths.push(count);
            let (row, col) = t.indices[p];
            slots.push((b, row as usize * w + col as usize));
        }
    }
    let c = net_cfg.pfn_channels;
    let mut n = Net {
        tape,
        weights,
        leaves,
        train,
        stats: Vec::new(),
    };

    let image = if lengths.is_empty() {
        n.tape.leaf(Tensor::zeros(vec![batch.len(), c, h, w]), false)
    } else {
        let rows = features.len() / POINT_FEATURES;
        let x = n.tape.leaf(Tensor::new(vec![rows, POINT_FEATURES], features), false);
        let (lw, lb) = (n.param("pfn.linear.weight"), n.maybe("pfn.linear.bias"));
        let y = n.tape.linear(x, lw, lb);
        let y = n.norm_relu(y, "pfn");
        let pooled = n.tape.segment_max(y, &lengths);
        n.tape.scatter(pooled, slots, batch.len(), h, w)
    };

    let mut x = image;
    let mut ups = Vec::new();
    for (i, block) in net_cfg.backbone_blocks.iter().enumerate() {
        for j in 0..block.layers {
            let p = format!("backbone.block{i}.conv{j}");
            let stride = if j == 0 { block.stride } else { 1 };
            let (cw, cb) = (n.param(&format!("{p}.weight")), n.maybe(&format!("{p}.bias")));
            let y = n.tape.conv2d(x, cw, cb, stride, 1);
            x = n.norm_relu(y, &p);
        }
        let p = format!("backbone.up{i}");
        let (uw, ub) = (n.param(&format!("{p}.weight")), n.maybe(&format!("{p}.bias")));
        let u = n.tape.conv_transpose2d(x, uw, ub, net_cfg.upsample_factor(i));
        ups.push(n.norm_relu(u, &p));
    }
    let feat = if ups.len() == 1 {
        ups[0]
    } else {
        n.tape.concat_channels(&ups)
    };
    let (cw, cb) = (n.param("head.cls.weight"), n.param("head.cls.bias"));
    let cls = n.tape.conv2d(feat, cw, Some(cb), 1, 0);
    let (rw, rb) = (n.param("head.reg.weight"), n.param("head.reg.bias"));
    let reg = n.tape.conv2d(feat, rw, Some(rb), 1, 0);
    Ok(Forward {
        cls,
        reg,
        stats: n.stats,
    })
}

/// Total training loss of a batch: classification plus weighted smooth-L1
/// over positive anchors, both normalized by the positive count (at least 1).
pub fn batch_loss<T: Scalar>(
    tape: &mut Tape<T>,
    fwd: &Forward,
    anchors: &AnchorGrid,
    targets: &[&RegressionTargets],
    net: &NetworkConfig,
) -> Var {
    let per_cls = anchors.len();
    let per_reg = anchors.len() * BOX_CODE;
    let mut labels = vec![Label::Ignore; targets.len() * per_cls];
    let mut reg_targets = Vec::new();
    let mut positives = 0usize;
    for (b, t) in targets.iter().enumerate() {
        for (i, &label) in t.labels.iter().enumerate() {
            labels[b * per_cls + anchors.cls_offset(i)] = label;
            if label == Label::Positive {
                positives += 1;
                for k in 0..BOX_CODE {
                    reg_targets.push((b * per_reg + anchors.reg_offset(i, k), t.residuals[i][k]));
                }
            }
        }
    }
    let norm = positives.max(1) as f64;
    let l = &net.loss;
    let params = match l.classification {
        ClassLoss::Focal => ClassLossParams {
            positive_weight: l.focal_alpha,
            negative_weight: 1.0 - l.focal_alpha,
            gamma: l.focal_gamma,
        },
        ClassLoss::CrossEntropy => ClassLossParams {
            positive_weight: 1.0,
            negative_weight: 1.0,
            gamma: 0.0,
        },
    };
    let cls = tape.classification_loss(fwd.cls, &labels, params, norm);
    let reg = tape.smooth_l1_loss(fwd.reg, &reg_targets, l.smooth_l1_beta, l.localization_weight, norm);
    tape.add(cls, reg)
}

/// Train-mode loss of a batch without gradients, with the tape's branch
/// signature.
pub fn training_loss<T: Scalar>(
    weights: &ModelWeights<T>,
    batch: &[&PillarTensor],
    targets: &[&RegressionTargets],
    anchors: &AnchorGrid,
) -> Result<(f64, u64), DetectorError> {
    let mut tape = Tape::new();
    let leaves = parameter_leaves(&mut tape, weights, false);
    let fwd = forward(&mut tape, weights, &leaves, batch, true)?;
    let loss = batch_loss(&mut tape, &fwd, anchors, targets, &weights.config);
    Ok((tape.value(loss).data[0].f64(), tape.branch_signature()))
}

/// Loss value and per-parameter gradients (empty for frozen parameters) in
/// train mode, plus the batch statistics for running-average updates.
pub fn loss_and_gradients<T: Scalar>(
    weights: &ModelWeights<T>,
    batch: &[&PillarTensor],
    targets: &[&RegressionTargets],
    anchors: &AnchorGrid,
) -> Result<(f64, Vec<Vec<T>>, Vec<(usize, BatchStats)>), DetectorError> {
    let mut tape = Tape::new();
    let leaves = parameter_leaves(&mut tape, weights, true);
    let fwd = forward(&mut tape, weights, &leaves, batch, true)?;
    let loss = batch_loss(&mut tape, &fwd, anchors, targets, &weights.config);
    let value = tape.value(loss).data[0].f64();
    tape.backward(loss);
    let grads = leaves
        .iter()
        .zip(&weights.params)
        .map(|(&v, p)| match tape.grad(v) {
            Some(g) => g.to_vec(),
            None if p.trainable => vec![T::zero(); p.data.len()],
            None => Vec::new(),
        })
        .collect();
    Ok((value, grads, fwd.stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud_io::{LidarPoint, PointCloud};
    use crate::pillars::{encode_pillars, GridConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk_pillars(seed: u64, n: usize) -> PillarTensor {
        let g = GridConfig::desk().params().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                LidarPoint::new(
                    rng.random_range(0.0..20.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-2.0..4.0),
                    rng.random_range(0.0..10.0),
                )
            })
            .collect();
        encode_pillars(&PointCloud::new(pts, 0.0, ""), &g, 4000, 16, seed).unwrap()
    }

    #[test]
    fn output_shapes_and_zero_weights() {
        let net = NetworkConfig::desk();
        let w = ModelWeights::<f32>::zeros(&net).unwrap();
        let p = desk_pillars(1, 300);
        let mut tape = Tape::new();
        let leaves = parameter_leaves(&mut tape, &w, false);
        let f = forward(&mut tape, &w, &leaves, &[&p, &p], false).unwrap();
        assert_eq!(tape.shape(f.cls), &[2, 2, 40, 40]);
        assert_eq!(tape.shape(f.reg), &[2, 14, 40, 40]);
        assert!(tape.value(f.cls).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let net = NetworkConfig::desk();
        let w = ModelWeights::<f32>::init(&net, 5).unwrap();
        let p = desk_pillars(2, 500);
        let run = || {
            let mut tape = Tape::new();
            let leaves = parameter_leaves(&mut tape, &w, false);
            let f = forward(&mut tape, &w, &leaves, &[&p], false).unwrap();
            (tape.value(f.cls).clone(), tape.value(f.reg).clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn pfn_ignores_point_order_and_duplicates() {
        let net = NetworkConfig {
            batch_norm: false,
            ..NetworkConfig::desk()
        };
        let w = ModelWeights::<f64>::init(&net, 9).unwrap();
        let base = desk_pillars(3, 400);
        // reverse the points of every pillar, and separately duplicate each
        // pillar's first point into a spare slot
        let mut reversed = base.clone();
        let mut duplicated = base.clone();
        for p in 0..base.num_pillars() {
            let n = base.counts[p] as usize;
            for s in 0..n {
                let src = base.point(p, n - 1 - s).to_vec();
                let at = (p * base.max_points + s) * POINT_FEATURES;
                reversed.features[at..at + POINT_FEATURES].copy_from_slice(&src);
            }
            if n < base.max_points {
                let first = base.point(p, 0).to_vec();
                let at = (p * base.max_points + n) * POINT_FEATURES;
                duplicated.features[at..at + POINT_FEATURES].copy_from_slice(&first);
                duplicated.counts[p] += 1;
            }
        }
        let image = |t: &PillarTensor| {
            let mut tape = Tape::new();
            let leaves = parameter_leaves(&mut tape, &w, false);
            let f = forward(&mut tape, &w, &leaves, &[t], false).unwrap();
            tape.value(f.cls).data.clone()
        };
        let a = image(&base);
        assert_eq!(a, image(&reversed));
        assert_eq!(a, image(&duplicated));
    }
}
