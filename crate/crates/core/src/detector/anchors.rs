//! Anchor layout, box residual coding and training-target assignment.

use super::config::NetworkConfig;
use super::tape::Label;
use super::DetectorError;
use crate::geometry::{bev_iou, Cuboid, GeometryError};
use crate::pillars::GridParams;

/// Number of regression values per anchor: `Δx, Δy, Δz, Δl, Δw, Δh, Δθ`.
pub const BOX_CODE: usize = 7;

/// Anchors for one feature map, indexed `(row · width + col) · per_cell + yaw`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub anchors: Vec<Cuboid>,
    pub height: usize,
    pub width: usize,
    pub per_cell: usize,
}

impl AnchorGrid {
    pub fn new(grid: &GridParams, net: &NetworkConfig) -> Result<Self, DetectorError> {
        net.validate()?;
        let stride = net.output_stride();
        if grid.ds_factor != stride {
            return Err(DetectorError::Config(format!(
                "grid ds_factor {} differs from the first block stride {stride}",
                grid.ds_factor
            )));
        }
        let total = net.total_stride();
        if grid.x_n % total != 0 || grid.y_n % total != 0 {
            return Err(DetectorError::Config(format!(
                "pseudo-image {} x {} is not divisible by the backbone stride {total}",
                grid.y_n, grid.x_n
            )));
        }
        let (height, width) = grid.feature_dims();
        let t = &net.anchor;
        let (cx, cy) = (grid.x_step * stride as f64, grid.y_step * stride as f64);
        let mut anchors = Vec::with_capacity(height * width * t.yaws.len());
        for row in 0..height {
            for col in 0..width {
                let x = grid.x_min + (col as f64 + 0.5) * cx;
                let y = grid.y_min + (row as f64 + 0.5) * cy;
                for &yaw in &t.yaws {
                    anchors.push(Cuboid::new([x, y, t.z_center], [t.length, t.width, t.height], yaw));
                }
            }
        }
        Ok(Self {
            anchors,
            height,
            width,
            per_cell: t.yaws.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    fn split(&self, idx: usize) -> (usize, usize) {
        (idx / self.per_cell, idx % self.per_cell)
    }

    /// Offset of anchor `idx`'s logit within one sample's `(A, H, W)` map.
    pub fn cls_offset(&self, idx: usize) -> usize {
        let (cell, a) = self.split(idx);
        a * self.height * self.width + cell
    }

    /// Offset of residual `k` of anchor `idx` within one sample's `(7A, H, W)` map.
    pub fn reg_offset(&self, idx: usize, k: usize) -> usize {
        let (cell, a) = self.split(idx);
        (a * BOX_CODE + k) * self.height * self.width + cell
    }
}

/// Residuals taking `anchor` to `truth`; centers are normalized by the anchor
/// footprint diagonal, sizes are log ratios.
pub fn encode_box(truth: &Cuboid, anchor: &Cuboid) -> [f64; BOX_CODE] {
    let d = anchor.x_len.hypot(anchor.y_len);
    [
        (truth.x_ctr - anchor.x_ctr) / d,
        (truth.y_ctr - anchor.y_ctr) / d,
        (truth.z_ctr - anchor.z_ctr) / anchor.z_len,
        (truth.x_len / anchor.x_len).ln(),
        (truth.y_len / anchor.y_len).ln(),
        (truth.z_len / anchor.z_len).ln(),
        truth.z_rot - anchor.z_rot,
    ]
}

/// Inverse of [`encode_box`].
pub fn decode_box(anchor: &Cuboid, r: &[f64; BOX_CODE]) -> Cuboid {
    let d = anchor.x_len.hypot(anchor.y_len);
    Cuboid::new(
        [
            r[0] * d + anchor.x_ctr,
            r[1] * d + anchor.y_ctr,
            r[2] * anchor.z_len + anchor.z_ctr,
        ],
        [
            r[3].exp() * anchor.x_len,
            r[4].exp() * anchor.y_len,
            r[5].exp() * anchor.z_len,
        ],
        r[6] + anchor.z_rot,
    )
}

/// Per-anchor training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTargets {
    pub labels: Vec<Label>,
    /// Residuals to the matched truth; zero for non-positives.
    pub residuals: Vec<[f64; BOX_CODE]>,
    /// Truth index each positive regresses toward.
    pub matched: Vec<Option<usize>>,
}

impl RegressionTargets {
    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l == Label::Positive).count()
    }
}

/// Label anchors by BEV IoU with the truths.
///
/// Positive when the best IoU reaches `match_iou_pos`, or when the anchor
/// attains some truth's highest (non-zero) IoU, ties included. Negative below
/// `match_iou_neg`, ignored in between. Positives regress toward their
/// highest-IoU truth (first on ties).
pub fn assign_targets(
    anchors: &[Cuboid],
    truths: &[Cuboid],
    net: &NetworkConfig,
) -> Result<RegressionTargets, GeometryError> {
    let n = anchors.len();
    let mut best = vec![0.0; n];
    let mut best_truth = vec![None; n];
    let mut forced = vec![false; n];
    let mut column = vec![0.0; n];
    for (j, truth) in truths.iter().enumerate() {
        let mut top = 0.0f64;
        for (i, a) in anchors.iter().enumerate() {
            let iou = bev_iou(a, truth)?;
            column[i] = iou;
            top = top.max(iou);
            if best_truth[i].is_none() || iou > best[i] {
                best[i] = iou;
                best_truth[i] = Some(j);
            }
        }
        if top > 0.0 {
            for i in 0..n {
                if column[i] == top {
                    forced[i] = true;
                }
            }
        }
    }
    let mut out = RegressionTargets {
        labels: Vec::with_capacity(n),
        residuals: vec![[0.0; BOX_CODE]; n],
        matched: vec![None; n],
    };
    for i in 0..n {
        let label = if forced[i] || (best_truth[i].is_some() && best[i] >= net.match_iou_pos) {
            let j = best_truth[i].expect("positives have a truth");
            out.residuals[i] = encode_box(&truths[j], &anchors[i]);
            out.matched[i] = Some(j);
            Label::Positive
        } else if best[i] < net.match_iou_neg {
            Label::Negative
        } else {
            Label::Ignore
        };
        out.labels.push(label);
    }
    Ok(out)
}
