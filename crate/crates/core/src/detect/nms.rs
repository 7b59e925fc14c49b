use std::cmp::Ordering;

use super::RotatedBox;

/// Intersection over union of the axis-aligned envelopes.
pub fn iou(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.envelope();
    let (bx0, by0, bx1, by1) = b.envelope();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Descending score, then ascending centre x, then centre y.
pub(crate) fn rank(a: &RotatedBox, b: &RotatedBox) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.cx.total_cmp(&b.cx))
        .then(a.cy.total_cmp(&b.cy))
}

/// Greedy non-maximum suppression: keep the best remaining box, drop every box
/// overlapping it with IoU ≥ `iou_threshold`, repeat.
pub fn nms(boxes: &[RotatedBox], iou_threshold: f64) -> Vec<RotatedBox> {
    let mut order: Vec<&RotatedBox> = boxes.iter().collect();
    order.sort_by(|a, b| rank(a, b));
    let mut suppressed = vec![false; order.len()];
    let mut keep = Vec::new();
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        keep.push(*order[i]);
        for j in i + 1..order.len() {
            if !suppressed[j] && iou(order[i], order[j]) >= iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}
