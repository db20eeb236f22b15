//! Detection evaluation: greedy one-to-one matching by polygon IoU,
//! precision / recall / F-measure.

use crate::data::AnnotatedScene;
use crate::detector::DetectorModel;
use crate::error::{invalid, Result};
use crate::geometry::{polygon_iou, Quadrilateral};
use crate::parallel::par_map_collect;

/// Run the detector over every scene (parallel across images) and return
/// (quad, score) lists in scene order.
pub fn detect_all(
    model: &DetectorModel,
    scenes: &[AnnotatedScene],
) -> Result<Vec<Vec<(Quadrilateral, f64)>>> {
    let results = par_map_collect(scenes.len(), |i| -> Result<Vec<(Quadrilateral, f64)>> {
        let detections = model.detect(&scenes[i].image)?;
        Ok(detections.into_iter().map(|d| (d.quad, d.score)).collect())
    });
    results.into_iter().collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchRecord {
    pub detection: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub iou_threshold: f64,
    pub total_detections: usize,
    pub total_gt: usize,
    pub total_matched: usize,
    /// Matched pairs per image, in input image order.
    pub per_image: Vec<Vec<MatchRecord>>,
}

/// Match detections to ground truth greedily by descending score; each
/// detection claims the best still-unmatched box with IoU at or above the
/// threshold. Precision is 0 when nothing was detected.
pub fn evaluate(
    detections: &[Vec<(Quadrilateral, f64)>],
    ground_truth: &[Vec<Quadrilateral>],
    iou_threshold: f64,
) -> Result<EvalReport> {
    if detections.len() != ground_truth.len() {
        return Err(invalid!(
            "{} detection lists vs {} ground-truth lists",
            detections.len(),
            ground_truth.len()
        ));
    }
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(invalid!("iou threshold {iou_threshold} outside [0,1]"));
    }
    let mut total_detections = 0;
    let mut total_gt = 0;
    let mut total_matched = 0;
    let mut per_image = Vec::with_capacity(detections.len());
    for (dets, gts) in detections.iter().zip(ground_truth) {
        total_detections += dets.len();
        total_gt += gts.len();
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&i, &j| {
            dets[j].1.partial_cmp(&dets[i].1).expect("finite scores").then(i.cmp(&j))
        });
        let mut gt_taken = vec![false; gts.len()];
        let mut matches = Vec::new();
        for &di in &order {
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in gts.iter().enumerate() {
                if gt_taken[gi] {
                    continue;
                }
                let iou = polygon_iou(&dets[di].0, gt);
                if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            if let Some((gi, iou)) = best {
                gt_taken[gi] = true;
                matches.push(MatchRecord { detection: di, gt: gi, iou });
            }
        }
        total_matched += matches.len();
        per_image.push(matches);
    }
    let precision = if total_detections == 0 {
        0.0
    } else {
        total_matched as f64 / total_detections as f64
    };
    let recall = if total_gt == 0 { 0.0 } else { total_matched as f64 / total_gt as f64 };
    let f_measure = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EvalReport {
        precision,
        recall,
        f_measure,
        iou_threshold,
        total_detections,
        total_gt,
        total_matched,
        per_image,
    })
}
