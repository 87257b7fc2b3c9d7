use crate::geometry::{bev_iou, Detection};

/// Greedy non-maximum suppression on BEV IoU.
///
/// Detections scoring below `score_threshold` or with invalid boxes are
/// dropped. Survivors are visited by descending score (earlier index first
/// on ties); one is kept unless its IoU with an already kept box exceeds
/// `iou_threshold`. The result is sorted by descending score.
pub fn nms(detections: &[Detection], iou_threshold: f64, score_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len())
        .filter(|&i| {
            let d = &detections[i];
            d.score >= score_threshold && d.bbox.validate().is_ok()
        })
        .collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score).then(a.cmp(&b)));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = detections[i];
        if kept
            .iter()
            .all(|k| bev_iou(&k.bbox, &d.bbox).is_ok_and(|iou| iou <= iou_threshold))
        {
            kept.push(d);
        }
    }
    kept
}
