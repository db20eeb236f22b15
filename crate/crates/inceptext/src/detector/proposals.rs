//! Proposal selection: decode RPN outputs, clip, and axis-aligned NMS.

use super::anchors::{axis_iou, decode_box, Anchor};
use crate::geometry::Rect;

#[derive(Clone, Copy, Debug)]
pub struct ProposalConfig {
    pub pre_nms_top: usize,
    pub max_proposals: usize,
    pub nms_iou: f64,
    pub min_size: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig { pre_nms_top: 1000, max_proposals: 300, nms_iou: 0.7, min_size: 1.0 }
    }
}

/// Axis-aligned box with an objectness score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiBox {
    pub rect: Rect,
    pub score: f64,
}

/// Decode the top-scoring anchors, clip to the image, drop slivers, then
/// greedy NMS. Ties in score resolve by anchor order (row-major grid).
pub fn select_proposals(
    scores: &[f64],
    deltas: &[[f64; 4]],
    anchors: &[Anchor],
    image_w: f64,
    image_h: f64,
    cfg: &ProposalConfig,
) -> Vec<RoiBox> {
    debug_assert_eq!(scores.len(), anchors.len());
    debug_assert_eq!(deltas.len(), anchors.len());
    let mut order: Vec<usize> = (0..anchors.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .expect("finite scores")
            .then(i.cmp(&j))
    });
    order.truncate(cfg.pre_nms_top);

    let mut candidates: Vec<RoiBox> = Vec::with_capacity(order.len());
    for &i in &order {
        let Ok(decoded) = decode_box(&deltas[i], &anchors[i].rect()) else {
            continue;
        };
        let clipped = Rect::new(
            decoded.x0.clamp(0.0, image_w - 1.0),
            decoded.y0.clamp(0.0, image_h - 1.0),
            decoded.x1.clamp(0.0, image_w - 1.0),
            decoded.y1.clamp(0.0, image_h - 1.0),
        );
        if clipped.width() >= cfg.min_size && clipped.height() >= cfg.min_size {
            candidates.push(RoiBox { rect: clipped, score: scores[i] });
        }
    }

    let mut kept: Vec<RoiBox> = Vec::new();
    for candidate in candidates {
        if kept.len() >= cfg.max_proposals {
            break;
        }
        if kept
            .iter()
            .all(|k| axis_iou(&k.rect, &candidate.rect) <= cfg.nms_iou)
        {
            kept.push(candidate);
        }
    }
    kept
}
