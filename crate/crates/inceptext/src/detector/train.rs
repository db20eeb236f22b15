//! Training: multi-scale crop augmentation, the five-term loss with online
//! hard example mining, and adaptive-moment parameter updates.

use super::model::DetectorModel;
use super::proposals::RoiBox;
use super::targets::{
    assign_roi_targets, assign_rpn_targets, ohem_select, rasterize_quad_mask, AnchorLabel,
};
use crate::data::AnnotatedScene;
use crate::detector::anchors::encode_box;
use crate::error::{invalid, Result};
use crate::geometry::{Quadrilateral, Rect};
use crate::graph::{Graph, TensorId};
use crate::layers::ParamSet;
use crate::ops;
use crate::rng::DetRng;
use crate::tensor::Tensor;

/// The five loss terms; `total = l_rcls + l_rbox + l_cls + l_box +
/// lambda_m * l_mask` by construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_rcls: f64,
    pub l_rbox: f64,
    pub l_cls: f64,
    pub l_box: f64,
    pub l_mask: f64,
    pub lambda_m: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(
        l_rcls: f64,
        l_rbox: f64,
        l_cls: f64,
        l_box: f64,
        l_mask: f64,
        lambda_m: f64,
    ) -> Self {
        LossBreakdown {
            l_rcls,
            l_rbox,
            l_cls,
            l_box,
            l_mask,
            lambda_m,
            total: l_rcls + l_rbox + l_cls + l_box + lambda_m * l_mask,
        }
    }

    /// The composition identity, checked exactly.
    pub fn identity_holds(&self) -> bool {
        self.total == self.l_rcls + self.l_rbox + self.l_cls + self.l_box + self.lambda_m * self.l_mask
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Initial learning rate; decays 10x at two thirds of the run.
    pub lr: f64,
    pub lambda_m: f64,
    pub seed: u64,
    /// Anchors sampled per image for the RPN loss.
    pub rpn_batch: usize,
    /// ROIs sampled per image before hard example mining.
    pub roi_batch: usize,
    /// ROIs kept by hard example mining.
    pub ohem_keep: usize,
    /// Cap on positive ROIs per batch.
    pub max_pos_roi: usize,
    /// Short-edge targets of the random crop/scale augmentation.
    pub crop_scales: Vec<usize>,
    /// Smallest crop side as a fraction of the image side.
    pub crop_min_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            lr: 1e-3,
            lambda_m: 2.0,
            seed: 0,
            rpn_batch: 256,
            roi_batch: 96,
            ohem_keep: 64,
            max_pos_roi: 32,
            crop_scales: scales_for_scene(320),
            crop_min_frac: 0.75,
        }
    }
}

/// The multi-scale short-edge set scaled proportionally to the scene size
/// (640/800/960/1120 at 1280-pixel scenes becomes 160/200/240/280 at 320).
pub fn scales_for_scene(scene_side: usize) -> Vec<usize> {
    [640usize, 800, 960, 1120]
        .iter()
        .map(|&e| (e * scene_side / 1280).max(32))
        .collect()
}

pub fn lr_at(base: f64, iteration: usize, total: usize) -> f64 {
    if total > 0 && iteration >= total * 2 / 3 {
        base * 0.1
    } else {
        base
    }
}

// ── Augmentation ────────────────────────────────────────────────────────

/// Random square crop, rescale to a sampled short edge, zero-pad to the
/// backbone stride. Boxes not fully inside the crop are dropped; when none
/// survive the full frame is used instead.
pub fn augment_scene(
    scene: &AnnotatedScene,
    tc: &TrainConfig,
    rng: &mut DetRng,
) -> Result<(Tensor<f32>, Vec<Quadrilateral>)> {
    let (h, w) = (scene.image.dim(1), scene.image.dim(2));
    let side = h.min(w);
    let crop_side = ((side as f64) * rng.range_f64(tc.crop_min_frac, 1.0)).round() as usize;
    let crop_side = crop_side.clamp(32, side);
    let x0 = rng.below(w - crop_side + 1);
    let y0 = rng.below(h - crop_side + 1);

    let inside = |q: &Quadrilateral, ox: f64, oy: f64, side: f64| {
        q.corners.iter().all(|p| {
            p.x >= ox && p.x <= ox + side - 1.0 && p.y >= oy && p.y <= oy + side - 1.0
        })
    };
    let mut kept: Vec<Quadrilateral> = scene
        .quads
        .iter()
        .filter(|q| inside(q, x0 as f64, y0 as f64, crop_side as f64))
        .cloned()
        .collect();
    let (x0, y0, crop_side) = if kept.is_empty() {
        kept = scene.quads.clone();
        (0, 0, side)
    } else {
        (x0, y0, crop_side)
    };

    let target = tc.crop_scales[rng.below(tc.crop_scales.len().max(1))];
    let scale = target as f64 / crop_side as f64;
    let resized = resize_crop(&scene.image, x0, y0, crop_side, target)?;

    let stride = crate::backbone::BackboneConfig::TOTAL_STRIDE;
    let padded_side = target.div_ceil(stride) * stride;
    let image = pad_bottom_right(&resized, padded_side, padded_side);

    let quads = kept
        .into_iter()
        .map(|q| {
            let corners = q.corners.map(|p| {
                crate::geometry::Point::new((p.x - x0 as f64) * scale, (p.y - y0 as f64) * scale)
            });
            Quadrilateral::from_corners(corners)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((image, quads))
}

/// Bilinear resize of a square crop to `target` pixels per side.
fn resize_crop(
    image: &Tensor<f32>,
    x0: usize,
    y0: usize,
    crop: usize,
    target: usize,
) -> Result<Tensor<f32>> {
    let (c, h, w) = (image.dim(0), image.dim(1), image.dim(2));
    if x0 + crop > w || y0 + crop > h {
        return Err(invalid!("crop window out of range"));
    }
    let data = image.data();
    let scale = crop as f64 / target as f64;
    let mut out = vec![0.0f32; c * target * target];
    for ci in 0..c {
        let plane = &data[ci * h * w..][..h * w];
        for ty in 0..target {
            let sy = ((ty as f64 + 0.5) * scale - 0.5 + y0 as f64).clamp(0.0, (h - 1) as f64);
            let iy0 = sy.floor() as usize;
            let iy1 = (iy0 + 1).min(h - 1);
            let fy = (sy - iy0 as f64) as f32;
            for tx in 0..target {
                let sx =
                    ((tx as f64 + 0.5) * scale - 0.5 + x0 as f64).clamp(0.0, (w - 1) as f64);
                let ix0 = sx.floor() as usize;
                let ix1 = (ix0 + 1).min(w - 1);
                let fx = (sx - ix0 as f64) as f32;
                let top = plane[iy0 * w + ix0] * (1.0 - fx) + plane[iy0 * w + ix1] * fx;
                let bot = plane[iy1 * w + ix0] * (1.0 - fx) + plane[iy1 * w + ix1] * fx;
                out[(ci * target + ty) * target + tx] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::new(vec![c, target, target], out)
}

fn pad_bottom_right(image: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let (c, h, w) = (image.dim(0), image.dim(1), image.dim(2));
    if h == out_h && w == out_w {
        return image.clone();
    }
    let data = image.data();
    let mut out = vec![0.0f32; c * out_h * out_w];
    for ci in 0..c {
        for y in 0..h {
            let src = &data[(ci * h + y) * w..][..w];
            out[(ci * out_h + y) * out_w..][..w].copy_from_slice(src);
        }
    }
    Tensor::new(vec![c, out_h, out_w], out).expect("padded shape")
}

// ── Optimizer ───────────────────────────────────────────────────────────

/// Adaptive moment estimation with bias correction.
pub struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(params: &ParamSet<f32>) -> Self {
        let m = params.ids().map(|id| vec![0.0; params.get(id).numel()]).collect();
        let v = params.ids().map(|id| vec![0.0; params.get(id).numel()]).collect();
        Adam { m, v, t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(
        &mut self,
        params: &mut ParamSet<f32>,
        grads: &[Option<Tensor<f32>>],
        lr: f64,
    ) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, id) in params.ids().enumerate().collect::<Vec<_>>() {
            let Some(grad) = &grads[slot] else { continue };
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let data = params.get_mut(id).data_mut();
            for ((p, g), (mi, vi)) in
                data.iter_mut().zip(grad.data()).zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = *g as f64;
                let mn = self.beta1 * (*mi as f64) + (1.0 - self.beta1) * g;
                let vn = self.beta2 * (*vi as f64) + (1.0 - self.beta2) * g * g;
                *mi = mn as f32;
                *vi = vn as f32;
                let update = lr * (mn / c1) / ((vn / c2).sqrt() + self.eps);
                *p -= update as f32;
            }
        }
    }
}

// ── One training iteration ──────────────────────────────────────────────

fn softmax_ce_value(logits: &[f32], target: usize) -> f64 {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
    let lse: f64 = logits.iter().map(|&v| ((v as f64) - m).exp()).sum();
    m + lse.ln() - logits[target] as f64
}

fn smooth_l1_value(pred: &[f32], target: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        let d = p as f64 - t;
        acc += if d.abs() < 1.0 { 0.5 * d * d } else { d.abs() - 0.5 };
    }
    acc / pred.len() as f64
}

fn bce_value(logits: &[f32], targets: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&x, &t) in logits.iter().zip(targets) {
        let x = x as f64;
        acc += x.max(0.0) - x * t + (1.0 + (-x.abs()).exp()).ln();
    }
    acc / logits.len() as f64
}

struct SampledRoi {
    rect: Rect,
    gt: Option<usize>,
}

/// Forward, loss, backward, and one optimizer step on a single scene.
pub fn train_iteration(
    model: &mut DetectorModel,
    adam: &mut Adam,
    scene: &AnnotatedScene,
    tc: &TrainConfig,
    iteration: usize,
) -> Result<LossBreakdown> {
    let mut rng = DetRng::new(tc.seed).split(0x17e4_0000 ^ iteration as u64);
    let (image, gt_quads) = augment_scene(scene, tc, &mut rng)?;
    if gt_quads.is_empty() {
        return Err(invalid!("training scene has no ground truth"));
    }
    let (h, w) = (image.dim(1), image.dim(2));
    let gt_rects: Vec<Rect> = gt_quads.iter().map(|q| q.bounds()).collect();

    let mut g: Graph<f32> = Graph::new();
    let bound = model.params.bind(&mut g, true);
    let image_id = {
        let batched = image.clone().reshaped(vec![1, 3, h, w])?;
        g.constant(batched)
    };
    let maps = model.forward_maps(&mut g, &bound, image_id)?;

    // ── RPN losses ──
    let anchors = model.anchors_for(&maps);
    let labels = assign_rpn_targets(&anchors, &gt_rects, 0.7, 0.3);
    let mut pos_idx: Vec<usize> = Vec::new();
    let mut neg_idx: Vec<usize> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            AnchorLabel::Positive(_) => pos_idx.push(i),
            AnchorLabel::Negative => neg_idx.push(i),
            AnchorLabel::Ignore => {}
        }
    }
    rng.shuffle(&mut pos_idx);
    rng.shuffle(&mut neg_idx);
    pos_idx.truncate(tc.rpn_batch / 2);
    neg_idx.truncate(tc.rpn_batch - pos_idx.len());
    let sampled: Vec<(usize, usize)> = pos_idx
        .iter()
        .map(|&i| (i, 1usize))
        .chain(neg_idx.iter().map(|&i| (i, 0usize)))
        .collect();

    let cells = maps.feature_w;
    let per_cell = super::anchors::ANCHORS_PER_CELL;
    let locate = |anchor_idx: usize| {
        let cell = anchor_idx / per_cell;
        (cell / cells, cell % cells, anchor_idx % per_cell)
    };
    let mut logit_idx = Vec::with_capacity(sampled.len() * 2);
    let mut rpn_targets = Vec::with_capacity(sampled.len());
    for &(i, label) in &sampled {
        let (y, x, a) = locate(i);
        logit_idx.extend(model.anchor_logit_indices(&maps, y, x, a));
        rpn_targets.push(label);
    }
    let flat_scores_len = g.value(maps.rpn_scores).numel();
    let scores_flat = ops::reshape(&mut g, maps.rpn_scores, vec![flat_scores_len])?;
    let picked = ops::gather(&mut g, scores_flat, logit_idx)?;
    let logits2 = ops::reshape(&mut g, picked, vec![rpn_targets.len(), 2])?;
    let l_rcls = ops::softmax_cross_entropy(&mut g, logits2, &rpn_targets)?;

    let l_rbox = if pos_idx.is_empty() {
        g.constant(Tensor::scalar(0.0))
    } else {
        let mut delta_idx = Vec::with_capacity(pos_idx.len() * 4);
        let mut delta_targets = Vec::with_capacity(pos_idx.len() * 4);
        for &i in &pos_idx {
            let (y, x, a) = locate(i);
            delta_idx.extend(model.anchor_delta_indices(&maps, y, x, a));
            let AnchorLabel::Positive(gi) = labels[i] else { unreachable!() };
            let enc = encode_box(&gt_rects[gi], &anchors[i].rect())?;
            delta_targets.extend(enc.iter().map(|&v| v as f32));
        }
        let flat_len = g.value(maps.rpn_deltas).numel();
        let deltas_flat = ops::reshape(&mut g, maps.rpn_deltas, vec![flat_len])?;
        let picked = ops::gather(&mut g, deltas_flat, delta_idx)?;
        let n = delta_targets.len();
        let target = g.constant(Tensor::new(vec![n], delta_targets)?);
        ops::smooth_l1(&mut g, picked, target)?
    };

    // ── ROI sampling ──
    let mut proposal_cfg = model.config.proposals;
    proposal_cfg.max_proposals = proposal_cfg.max_proposals.min(tc.roi_batch * 3);
    let mut rois: Vec<RoiBox> = model.propose(&g, &maps, w as f64, h as f64, &proposal_cfg);
    for r in &gt_rects {
        rois.push(RoiBox { rect: *r, score: 1.0 });
    }
    let roi_rects: Vec<Rect> = rois.iter().map(|r| r.rect).collect();
    let roi_targets = assign_roi_targets(&roi_rects, &gt_rects, 0.5);
    let mut pos_rois: Vec<usize> = Vec::new();
    let mut neg_rois: Vec<usize> = Vec::new();
    for (i, t) in roi_targets.iter().enumerate() {
        if t.is_positive() {
            pos_rois.push(i);
        } else {
            neg_rois.push(i);
        }
    }
    rng.shuffle(&mut pos_rois);
    rng.shuffle(&mut neg_rois);
    pos_rois.truncate(tc.max_pos_roi);
    neg_rois.truncate(tc.roi_batch.saturating_sub(pos_rois.len()));
    let batch: Vec<SampledRoi> = pos_rois
        .iter()
        .map(|&i| SampledRoi { rect: roi_rects[i], gt: roi_targets[i].gt })
        .chain(neg_rois.iter().map(|&i| SampledRoi { rect: roi_rects[i], gt: None }))
        .collect();

    // ── Per-ROI heads and hard example mining ──
    struct RoiNodes {
        cls_logits: TensorId,
        label: usize,
        box_pred: Option<TensorId>,
        box_target: Option<Vec<f32>>,
        mask_pred: Option<TensorId>,
        mask_target: Option<Vec<f32>>,
    }
    let mask_res = model.config.mask_resolution;
    let mut nodes: Vec<RoiNodes> = Vec::with_capacity(batch.len());
    let mut per_roi_loss: Vec<f64> = Vec::with_capacity(batch.len());
    for roi in &batch {
        let heads = model.roi_heads(&mut g, &bound, &maps, &roi.rect)?;
        let label = usize::from(roi.gt.is_some());
        let mut node = RoiNodes {
            cls_logits: heads.cls_logits,
            label,
            box_pred: None,
            box_target: None,
            mask_pred: None,
            mask_target: None,
        };
        let mut loss = softmax_ce_value(g.value(heads.cls_logits).data(), label);
        if let Some(gi) = roi.gt {
            let enc = encode_box(&gt_rects[gi], &roi.rect)?;
            let mask_grid = rasterize_quad_mask(&gt_quads[gi], &roi.rect, mask_res)?;
            let mask_logits = model.roi_mask(&mut g, &bound, &maps, &roi.rect, heads.cls_basis)?;
            loss += smooth_l1_value(g.value(heads.box_deltas).data(), &enc);
            loss += tc.lambda_m * bce_value(g.value(mask_logits).data(), &mask_grid.data);
            node.box_pred = Some(heads.box_deltas);
            node.box_target = Some(enc.iter().map(|&v| v as f32).collect());
            node.mask_pred = Some(mask_logits);
            node.mask_target = Some(mask_grid.data.iter().map(|&v| v as f32).collect());
        }
        nodes.push(node);
        per_roi_loss.push(loss);
    }
    let selected = ohem_select(&per_roi_loss, tc.ohem_keep);

    let mut sel_logits = Vec::new();
    let mut sel_labels = Vec::new();
    let mut sel_box_preds = Vec::new();
    let mut sel_box_targets: Vec<f32> = Vec::new();
    let mut sel_mask_losses = Vec::new();
    for &i in &selected {
        let n = &nodes[i];
        sel_logits.push(n.cls_logits);
        sel_labels.push(n.label);
        if let (Some(bp), Some(bt)) = (n.box_pred, &n.box_target) {
            sel_box_preds.push(bp);
            sel_box_targets.extend_from_slice(bt);
        }
        if let (Some(mp), Some(mt)) = (n.mask_pred, &n.mask_target) {
            let target = g.constant(Tensor::new(vec![mt.len()], mt.clone())?);
            sel_mask_losses.push(ops::binary_cross_entropy(&mut g, mp, target)?);
        }
    }

    let l_cls = if sel_logits.is_empty() {
        g.constant(Tensor::scalar(0.0))
    } else {
        let stacked = ops::concat_flat(&mut g, &sel_logits)?;
        let shaped = ops::reshape(&mut g, stacked, vec![sel_labels.len(), 2])?;
        ops::softmax_cross_entropy(&mut g, shaped, &sel_labels)?
    };
    let l_box = if sel_box_preds.is_empty() {
        g.constant(Tensor::scalar(0.0))
    } else {
        let stacked = ops::concat_flat(&mut g, &sel_box_preds)?;
        let n = sel_box_targets.len();
        let target = g.constant(Tensor::new(vec![n], sel_box_targets)?);
        ops::smooth_l1(&mut g, stacked, target)?
    };
    let l_mask = if sel_mask_losses.is_empty() {
        g.constant(Tensor::scalar(0.0))
    } else {
        let stacked = ops::concat_flat(&mut g, &sel_mask_losses)?;
        ops::mean_all(&mut g, stacked)
    };

    let rpn_sum = ops::add(&mut g, l_rcls, l_rbox)?;
    let with_cls = ops::add(&mut g, rpn_sum, l_cls)?;
    let with_box = ops::add(&mut g, with_cls, l_box)?;
    let mask_scaled = ops::scale(&mut g, l_mask, tc.lambda_m);
    let total = ops::add(&mut g, with_box, mask_scaled)?;

    let breakdown = LossBreakdown::new(
        g.value(l_rcls).first() as f64,
        g.value(l_rbox).first() as f64,
        g.value(l_cls).first() as f64,
        g.value(l_box).first() as f64,
        g.value(l_mask).first() as f64,
        tc.lambda_m,
    );

    g.backward(total)?;
    let grads: Vec<Option<Tensor<f32>>> = bound
        .all()
        .iter()
        .map(|&id| g.grad(id).cloned())
        .collect();
    drop(g);
    adam.step(&mut model.params, &grads, lr_at(tc.lr, iteration, tc.iterations));
    Ok(breakdown)
}

/// Full training loop. The observer sees every iteration's breakdown plus
/// the model state after that iteration's update (for logging and interval
/// checkpoints).
pub fn run_training(
    model: &mut DetectorModel,
    scenes: &[AnnotatedScene],
    tc: &TrainConfig,
    mut observer: impl FnMut(usize, &LossBreakdown, &DetectorModel) -> Result<()>,
) -> Result<Vec<LossBreakdown>> {
    if scenes.is_empty() {
        return Err(invalid!("training requires at least one scene"));
    }
    let mut adam = Adam::new(&model.params);
    let mut history = Vec::with_capacity(tc.iterations);
    let mut pick_rng = DetRng::new(tc.seed).split(0x5ce_9e5);
    for iteration in 0..tc.iterations {
        let scene = &scenes[pick_rng.below(scenes.len())];
        let breakdown = train_iteration(model, &mut adam, scene, tc, iteration)?;
        debug_assert!(breakdown.identity_holds());
        observer(iteration, &breakdown, model)?;
        history.push(breakdown);
    }
    Ok(history)
}
