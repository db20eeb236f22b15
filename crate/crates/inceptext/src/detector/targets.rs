//! Ground-truth assignment for anchors and ROIs, mask rasterization, and
//! online hard example mining.

use super::anchors::{axis_iou, Anchor};
use crate::error::{Error, Result};
use crate::geometry::{MaskGrid, Point, Quadrilateral, Rect};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnchorLabel {
    /// Matched to the ground-truth box with this index.
    Positive(usize),
    Negative,
    Ignore,
}

/// Faster-RCNN style assignment: positive at IoU >= `pos_thr` or as the
/// best anchor of a ground-truth box, negative below `neg_thr`, ignored in
/// between. With no ground truth every anchor is negative.
pub fn assign_rpn_targets(
    anchors: &[Anchor],
    gt: &[Rect],
    pos_thr: f64,
    neg_thr: f64,
) -> Vec<AnchorLabel> {
    if gt.is_empty() {
        return vec![AnchorLabel::Negative; anchors.len()];
    }
    let mut labels = Vec::with_capacity(anchors.len());
    let mut best_per_gt = vec![0.0f64; gt.len()];
    let mut ious = Vec::with_capacity(anchors.len());
    for anchor in anchors {
        let rect = anchor.rect();
        let mut best = 0.0;
        let mut best_gt = 0;
        for (gi, g) in gt.iter().enumerate() {
            let iou = axis_iou(&rect, g);
            if iou > best {
                best = iou;
                best_gt = gi;
            }
            if iou > best_per_gt[gi] {
                best_per_gt[gi] = iou;
            }
        }
        ious.push((best, best_gt));
    }
    for (ai, anchor) in anchors.iter().enumerate() {
        let (best, best_gt) = ious[ai];
        let mut label = if best >= pos_thr {
            AnchorLabel::Positive(best_gt)
        } else if best < neg_thr {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        };
        // an anchor that is the best match of some gt is positive regardless
        if !matches!(label, AnchorLabel::Positive(_)) {
            let rect = anchor.rect();
            for (gi, g) in gt.iter().enumerate() {
                if best_per_gt[gi] > 0.0 && (axis_iou(&rect, g) - best_per_gt[gi]).abs() <= 1e-9 {
                    label = AnchorLabel::Positive(gi);
                    break;
                }
            }
        }
        labels.push(label);
    }
    labels
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiTarget {
    /// Index of the matched ground truth when positive.
    pub gt: Option<usize>,
}

impl RoiTarget {
    pub fn is_positive(&self) -> bool {
        self.gt.is_some()
    }
}

/// An ROI is positive iff its axis-aligned IoU with some ground-truth box is
/// at least `pos_iou`; it is assigned to the best-overlapping one.
pub fn assign_roi_targets(rois: &[Rect], gt: &[Rect], pos_iou: f64) -> Vec<RoiTarget> {
    rois.iter()
        .map(|roi| {
            let mut best = 0.0;
            let mut best_gt = None;
            for (gi, g) in gt.iter().enumerate() {
                let iou = axis_iou(roi, g);
                if iou > best {
                    best = iou;
                    best_gt = Some(gi);
                }
            }
            RoiTarget { gt: if best >= pos_iou { best_gt } else { None } }
        })
        .collect()
}

/// Binary mask over the ROI window: a cell is 1 iff its center lies inside
/// the (convex) quadrilateral.
pub fn rasterize_quad_mask(
    quad: &Quadrilateral,
    roi: &Rect,
    resolution: usize,
) -> Result<MaskGrid> {
    if roi.width() <= 0.0 || roi.height() <= 0.0 {
        return Err(Error::DegenerateRoi { width: roi.width(), height: roi.height() });
    }
    let r = resolution;
    let mut data = vec![0.0f64; r * r];
    for cy in 0..r {
        for cx in 0..r {
            let p = Point::new(
                roi.x0 + (cx as f64 + 0.5) / r as f64 * roi.width(),
                roi.y0 + (cy as f64 + 0.5) / r as f64 * roi.height(),
            );
            if quad.contains(p) {
                data[cy * r + cx] = 1.0;
            }
        }
    }
    MaskGrid::new(r, r, data)
}

/// Indices of the `n_keep` largest losses (all indices when fewer exist),
/// ties resolved toward the lower index. The result is sorted ascending.
pub fn ohem_select(losses: &[f64], n_keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&i, &j| {
        losses[j]
            .partial_cmp(&losses[i])
            .expect("finite losses")
            .then(i.cmp(&j))
    });
    order.truncate(n_keep);
    order.sort_unstable();
    order
}
