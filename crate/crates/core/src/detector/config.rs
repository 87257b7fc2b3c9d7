use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::DetectorError;

/// One downsampling stage: a strided entry conv followed by `layers - 1`
/// stride-1 convs, all 3×3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub layers: usize,
    pub channels: usize,
    pub stride: usize,
}

/// Prior box tiled over every feature-map cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorTemplate {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub z_center: f64,
    /// Radians.
    pub yaws: Vec<f64>,
}

impl Default for AnchorTemplate {
    fn default() -> Self {
        Self {
            length: 0.5,
            width: 0.5,
            height: 0.3,
            z_center: 1.0,
            yaws: vec![0.0, FRAC_PI_2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLoss {
    Focal,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub classification: ClassLoss,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub smooth_l1_beta: f64,
    pub localization_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            classification: ClassLoss::Focal,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            smooth_l1_beta: 1.0 / 9.0,
            localization_weight: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub pfn_channels: usize,
    pub backbone_blocks: Vec<BlockConfig>,
    /// Output channels of each block's transposed-conv upsampler.
    pub upsample_channels: Vec<usize>,
    pub batch_norm: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub anchor: AnchorTemplate,
    pub match_iou_pos: f64,
    pub match_iou_neg: f64,
    pub score_threshold: f64,
    pub nms_iou_threshold: f64,
    pub loss: LossConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl NetworkConfig {
    pub fn desk() -> Self {
        Self {
            pfn_channels: 16,
            backbone_blocks: vec![
                BlockConfig {
                    layers: 2,
                    channels: 16,
                    stride: 2,
                },
                BlockConfig {
                    layers: 2,
                    channels: 32,
                    stride: 2,
                },
            ],
            upsample_channels: vec![32, 32],
            batch_norm: true,
            bn_eps: 1e-3,
            bn_momentum: 0.1,
            anchor: AnchorTemplate::default(),
            match_iou_pos: 0.5,
            match_iou_neg: 0.35,
            score_threshold: 0.6,
            nms_iou_threshold: 0.5,
            loss: LossConfig::default(),
        }
    }

    pub fn num_yaws(&self) -> usize {
        self.anchor.yaws.len()
    }

    /// Resolution drop from pseudo-image to head.
    pub fn output_stride(&self) -> usize {
        self.backbone_blocks.first().map_or(1, |b| b.stride)
    }

    /// Product of all block strides.
    pub fn total_stride(&self) -> usize {
        self.backbone_blocks.iter().map(|b| b.stride).product()
    }

    /// Transposed-conv factor bringing block `i` back to the head resolution.
    pub fn upsample_factor(&self, i: usize) -> usize {
        self.backbone_blocks[1..=i].iter().map(|b| b.stride).product()
    }

    pub fn head_channels(&self) -> usize {
        self.upsample_channels.iter().sum()
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: String| Err(DetectorError::Config(m));
        if self.pfn_channels == 0 {
            return bad("pfn_channels must be positive".into());
        }
        if self.backbone_blocks.is_empty() {
            return bad("at least one backbone block is required".into());
        }
        if self.upsample_channels.len() != self.backbone_blocks.len() {
            return bad(format!(
                "{} upsample channel counts for {} blocks",
                self.upsample_channels.len(),
                self.backbone_blocks.len()
            ));
        }
        for (i, b) in self.backbone_blocks.iter().enumerate() {
            if b.layers == 0 || b.channels == 0 || b.stride == 0 {
                return bad(format!("block {i} needs positive layers, channels and stride"));
            }
        }
        if self.upsample_channels.contains(&0) {
            return bad("upsample channels must be positive".into());
        }
        let a = &self.anchor;
        if !(a.length > 0.0 && a.width > 0.0 && a.height > 0.0) || a.yaws.is_empty() {
            return bad("anchor needs positive extents and at least one yaw".into());
        }
        if !(0.0..=1.0).contains(&self.match_iou_neg)
            || !(0.0..=1.0).contains(&self.match_iou_pos)
            || self.match_iou_neg >= self.match_iou_pos
        {
            return bad(format!(
                "match thresholds must satisfy 0 <= neg < pos <= 1, got {} / {}",
                self.match_iou_neg, self.match_iou_pos
            ));
        }
        if !(0.0..1.0).contains(&self.score_threshold) {
            return bad(format!("score_threshold {} outside [0, 1)", self.score_threshold));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_eps must be positive and bn_momentum in [0, 1]".into());
        }
        if !(self.loss.smooth_l1_beta > 0.0) || !(self.loss.localization_weight >= 0.0) {
            return bad("smooth_l1_beta must be positive and localization_weight non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.loss.focal_alpha) || !(self.loss.focal_gamma >= 0.0) {
            return bad("focal_alpha must lie in [0, 1] and focal_gamma be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mini_batch: usize,
    pub learning_rate: f64,
    /// Epochs between learning-rate drops.
    pub lr_drop_period: usize,
    pub lr_drop_factor: f64,
    /// ADAM first-moment decay.
    pub gradient_decay: f64,
    /// ADAM second-moment decay.
    pub squared_gradient_decay: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Largest uniform scene translation per axis, meters.
    pub augment_shift: [f64; 3],
    /// Mirror scenes across `y = 0` with probability one half.
    pub augment_mirror: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mini_batch: 2,
            learning_rate: 2e-4,
            lr_drop_period: 15,
            lr_drop_factor: 0.8,
            gradient_decay: 0.9,
            squared_gradient_decay: 0.999,
            epsilon: 1e-8,
            epochs: 70,
            seed: 0,
            augment_shift: [0.25, 0.25, 0.1],
            augment_mirror: true,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_drop_factor.powi((epoch / self.lr_drop_period) as i32)
    }

    pub fn augments(&self) -> bool {
        self.augment_mirror || self.augment_shift.iter().any(|&s| s > 0.0)
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let ok = self.mini_batch > 0
            && self.augment_shift.iter().all(|&s| s >= 0.0 && s.is_finite())
            && self.learning_rate > 0.0
            && self.lr_drop_period > 0
            && self.lr_drop_factor > 0.0
            && self.lr_drop_factor < 1.0
            && (0.0..1.0).contains(&self.gradient_decay)
            && (0.0..1.0).contains(&self.squared_gradient_decay)
            && self.epsilon > 0.0
            && self.epochs > 0;
        if ok {
            Ok(())
        } else {
            Err(DetectorError::Config(format!("invalid training config {self:?}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_schedule() {
        let c = TrainConfig::default();
        for e in 0..15 {
            assert_eq!(c.learning_rate_at(e), 2e-4);
        }
        assert!((c.learning_rate_at(15) - 1.6e-4).abs() < 1e-18);
        assert!((c.learning_rate_at(30) - 1.28e-4).abs() < 1e-18);
    }

    #[test]
    fn desk_strides_and_validation() {
        let n = NetworkConfig::desk();
        n.validate().unwrap();
        assert_eq!((n.output_stride(), n.total_stride()), (2, 4));
        assert_eq!((n.upsample_factor(0), n.upsample_factor(1)), (1, 2));
        assert_eq!(n.head_channels(), 64);
        let bad = NetworkConfig {
            match_iou_neg: 0.6,
            ..NetworkConfig::desk()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig {
            lr_drop_factor: 1.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let n = NetworkConfig::desk();
        let text = toml::to_string(&n).unwrap();
        assert_eq!(toml::from_str::<NetworkConfig>(&text).unwrap(), n);
        let partial: TrainConfig = toml::from_str("epochs = 150\nseed = 4").unwrap();
        assert_eq!(partial.epochs, 150);
        assert_eq!(partial.mini_batch, 2);
        assert!(toml::from_str::<TrainConfig>("epoch = 3").is_err());
    }
}
