use super::anchors::{decode_box, AnchorGrid, BOX_CODE};
use super::network::{forward, parameter_leaves};
use super::nms::nms;
use super::tape::Tape;
use super::weights::ModelWeights;
use super::DetectorError;
use crate::cloud_io::{crop, PointCloud};
use crate::geometry::{Detection, PositionEstimate, Source};
use crate::pillars::{encode_pillars, GridConfig, GridParams};

#[derive(Debug, Clone, PartialEq)]
pub struct DetectOutput {
    /// Post-NMS detections, best first.
    pub detections: Vec<Detection>,
    /// Center of the best detection; `None` is a no-prediction frame.
    pub estimate: Option<PositionEstimate>,
}

/// Frozen weights bound to a grid, ready for inference.
#[derive(Debug, Clone)]
pub struct Detector {
    pub weights: ModelWeights<f32>,
    pub grid: GridParams,
    pub max_pillars: usize,
    pub max_points_per_pillar: usize,
    anchors: AnchorGrid,
    /// Seed for pillar subsampling during encoding.
    pub encode_seed: u64,
}

impl Detector {
    pub fn new(weights: ModelWeights<f32>, grid: &GridConfig) -> Result<Self, DetectorError> {
        weights.validate()?;
        let params = grid.params()?;
        let anchors = AnchorGrid::new(&params, &weights.config)?;
        Ok(Self {
            weights,
            grid: params,
            max_pillars: grid.max_pillars,
            max_points_per_pillar: grid.max_points_per_pillar,
            anchors,
            encode_seed: 0,
        })
    }

    pub fn anchors(&self) -> &AnchorGrid {
        &self.anchors
    }

    /// crop → pillars → network → decode above the score threshold → NMS.
    pub fn detect(&self, cloud: &PointCloud) -> Result<DetectOutput, DetectorError> {
        let cropped = crop(cloud, &self.grid.crop_bounds());
        if cropped.is_empty() {
            return Ok(DetectOutput {
                detections: Vec::new(),
                estimate: None,
            });
        }
        let pillars = encode_pillars(
            &cropped,
            &self.grid,
            self.max_pillars,
            self.max_points_per_pillar,
            self.encode_seed,
        )?;
        let mut tape = Tape::<f32>::new();
        let leaves = parameter_leaves(&mut tape, &self.weights, false);
        let fwd = forward(&mut tape, &self.weights, &leaves, &[&pillars], false)?;
        let (cls, reg) = (&tape.value(fwd.cls).data, &tape.value(fwd.reg).data);
        let net = &self.weights.config;
        let mut candidates = Vec::new();
        for (i, anchor) in self.anchors.anchors.iter().enumerate() {
            let logit = cls[self.anchors.cls_offset(i)] as f64;
            let score = 1.0 / (1.0 + (-logit).exp());
            if score < net.score_threshold {
                continue;
            }
            let r: [f64; BOX_CODE] = std::array::from_fn(|k| reg[self.anchors.reg_offset(i, k)] as f64);
            candidates.push(Detection {
                bbox: decode_box(anchor, &r),
                score,
                class_id: 0,
            });
        }
        let detections = nms(&candidates, net.nms_iou_threshold, net.score_threshold);
        let estimate = detections
            .first()
            .map(|d| PositionEstimate::new(d.bbox.center(), cloud.timestamp, Source::Network));
        Ok(DetectOutput { detections, estimate })
    }
}

pub fn detect(
    cloud: &PointCloud,
    weights: &ModelWeights<f32>,
    grid: &GridConfig,
) -> Result<DetectOutput, DetectorError> {
    Detector::new(weights.clone(), grid)?.detect(cloud)
}
