//! The end-to-end detector: backbone, region proposal network, and
//! position-sensitive heads pooled through (deformable) PSROI pooling.
//!
//! Head layout: a k*k*2-channel stack for text/non-text classification, a
//! k*k*4 stack for class-agnostic box deltas, and an R*R stack (R = mask
//! resolution) pooled into per-pixel mask logits. Classification and mask
//! pooling are deformable; their per-bin offsets come from zero-initialized
//! fc layers over the standard-pooled classification features, scaled by
//! gamma and the ROI extent. The box stack stays on standard pooling in both
//! variants.

use super::anchors::{decode_box, generate_anchors, Anchor, ANCHORS_PER_CELL};
use super::proposals::{select_proposals, ProposalConfig, RoiBox};
use crate::backbone::{BackboneConfig, FusedBackbone};
use crate::error::{invalid, Result};
use crate::geometry::{
    merge_similar_masks, min_area_quadrilateral, nms_quads, MaskGrid, Point, Quadrilateral, Rect,
    ScoredMask,
};
use crate::graph::{Graph, TensorId};
use crate::layers::{Binding, ConvLayer, LinearLayer, ParamSet};
use crate::ops::{self, ConvSpec, PsMapSpec, PsRoi};
use crate::rng::DetRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct DetectorConfig {
    pub backbone: BackboneConfig,
    /// Position-sensitive bin grid of the classification and box heads.
    pub k_bins: usize,
    /// Mask head resolution (bins per side and mask size).
    pub mask_resolution: usize,
    /// Scale applied to normalized pooling offsets.
    pub gamma: f64,
    pub rpn_channels: usize,
    pub proposals: ProposalConfig,
    /// Minimum classification score for emitting a detection.
    pub score_threshold: f64,
    /// Polygon NMS threshold between final boxes.
    pub nms_iou: f64,
    /// Minimum IoU for a suppressed box to join the mask average.
    pub merge_iou: f64,
    /// Threshold for binarizing merged masks.
    pub mask_binarize: f64,
    /// Seed of the weight initialization stream.
    pub init_seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            backbone: BackboneConfig::default(),
            k_bins: 7,
            mask_resolution: 28,
            gamma: 0.1,
            rpn_channels: 64,
            proposals: ProposalConfig::default(),
            score_threshold: 0.5,
            nms_iou: 0.3,
            merge_iou: 0.5,
            mask_binarize: 0.5,
            init_seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn deformable(&self) -> bool {
        self.backbone.deformable
    }

    pub fn stride(&self) -> usize {
        BackboneConfig::FUSED_STRIDE
    }

    fn validate(&self) -> Result<()> {
        if self.k_bins == 0 || self.mask_resolution == 0 {
            return Err(invalid!("bin sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.score_threshold)
            || !(0.0..=1.0).contains(&self.nms_iou)
            || !(0.0..=1.0).contains(&self.merge_iou)
            || !(0.0..=1.0).contains(&self.mask_binarize)
        {
            return Err(invalid!("thresholds must lie in [0,1]"));
        }
        if self.gamma < 0.0 {
            return Err(invalid!("gamma must be non-negative"));
        }
        Ok(())
    }
}

/// One final detection: oriented box, score, instance mask over `roi`.
#[derive(Clone, Debug)]
pub struct Detection {
    pub quad: Quadrilateral,
    pub score: f64,
    pub mask: MaskGrid,
    pub roi: RoiBox,
}

/// Graph handles of one full forward pass over an image.
pub struct DetectorMaps {
    pub feature_h: usize,
    pub feature_w: usize,
    pub rpn_scores: TensorId,
    pub rpn_deltas: TensorId,
    /// (k*k*2, fh, fw)
    pub cls_maps: TensorId,
    /// (k*k*4, fh, fw)
    pub box_maps: TensorId,
    /// (R*R, fh, fw)
    pub mask_maps: TensorId,
}

/// Per-ROI head outputs (graph nodes).
pub struct RoiHeads {
    pub cls_logits: TensorId,
    pub box_deltas: TensorId,
    /// Flattened standard-pooled classification features, the offset basis.
    pub cls_basis: TensorId,
}

pub struct DetectorModel {
    pub config: DetectorConfig,
    pub params: ParamSet<f32>,
    backbone: FusedBackbone,
    rpn_conv: ConvLayer,
    rpn_score: ConvLayer,
    rpn_delta: ConvLayer,
    cls_maps: ConvLayer,
    box_maps: ConvLayer,
    mask_reduce: ConvLayer,
    mask_maps: ConvLayer,
    cls_offset_fc: Option<LinearLayer>,
    mask_offset_fc: Option<LinearLayer>,
}

impl DetectorModel {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = DetRng::new(config.init_seed).split(0xdec0de);
        let mut ps: ParamSet<f32> = ParamSet::new();
        let backbone = FusedBackbone::init(&mut ps, config.backbone, &mut rng)?;
        let c = config.backbone.fused_channels();
        let a = ANCHORS_PER_CELL;
        let rpn_conv = ConvLayer::init(
            &mut ps,
            "rpn.conv",
            ConvSpec::square(3, 1, 1, c, config.rpn_channels),
            &mut rng,
        );
        let rpn_score = ConvLayer::init(
            &mut ps,
            "rpn.score",
            ConvSpec::square(1, 1, 0, config.rpn_channels, 2 * a),
            &mut rng,
        );
        let rpn_delta = ConvLayer::init(
            &mut ps,
            "rpn.delta",
            ConvSpec::square(1, 1, 0, config.rpn_channels, 4 * a),
            &mut rng,
        );
        let k = config.k_bins;
        let r = config.mask_resolution;
        let cls_maps = ConvLayer::init(
            &mut ps,
            "head.cls_maps",
            ConvSpec::square(1, 1, 0, c, k * k * 2),
            &mut rng,
        );
        let box_maps = ConvLayer::init(
            &mut ps,
            "head.box_maps",
            ConvSpec::square(1, 1, 0, c, k * k * 4),
            &mut rng,
        );
        let mask_mid = 64.min(c);
        let mask_reduce = ConvLayer::init(
            &mut ps,
            "head.mask_reduce",
            ConvSpec::square(1, 1, 0, c, mask_mid),
            &mut rng,
        );
        let mask_maps = ConvLayer::init(
            &mut ps,
            "head.mask_maps",
            ConvSpec::square(1, 1, 0, mask_mid, r * r),
            &mut rng,
        );
        let (cls_offset_fc, mask_offset_fc) = if config.deformable() {
            (
                Some(LinearLayer::init_zero(&mut ps, "head.cls_offset_fc", 2 * k * k, 2 * k * k)),
                Some(LinearLayer::init_zero(&mut ps, "head.mask_offset_fc", 2 * k * k, 2 * r * r)),
            )
        } else {
            (None, None)
        };
        Ok(DetectorModel {
            config,
            params: ps,
            backbone,
            rpn_conv,
            rpn_score,
            rpn_delta,
            cls_maps,
            box_maps,
            mask_reduce,
            mask_maps,
            cls_offset_fc,
            mask_offset_fc,
        })
    }

    /// Full convolutional forward pass: backbone, RPN maps, head map stacks.
    pub fn forward_maps(
        &self,
        g: &mut Graph<f32>,
        bound: &Binding,
        image: TensorId,
    ) -> Result<DetectorMaps> {
        let features = self.backbone.forward(g, bound, image)?;
        let rpn_mid = self.rpn_conv.forward(g, bound, features.fused_rpn)?;
        let rpn_mid = ops::relu(g, rpn_mid);
        let rpn_scores = self.rpn_score.forward(g, bound, rpn_mid)?;
        let rpn_deltas = self.rpn_delta.forward(g, bound, rpn_mid)?;

        let head = features.fused_head;
        let (fh, fw) = (g.value(head).dim(2), g.value(head).dim(3));
        let to3 = |g: &mut Graph<f32>, t: TensorId| -> Result<TensorId> {
            let c = g.value(t).dim(1);
            ops::reshape(g, t, vec![c, fh, fw])
        };
        let cls = self.cls_maps.forward(g, bound, head)?;
        let cls = to3(g, cls)?;
        let boxm = self.box_maps.forward(g, bound, head)?;
        let boxm = to3(g, boxm)?;
        let mid = self.mask_reduce.forward(g, bound, head)?;
        let mid = ops::relu(g, mid);
        let mask = self.mask_maps.forward(g, bound, mid)?;
        let mask = to3(g, mask)?;
        Ok(DetectorMaps {
            feature_h: fh,
            feature_w: fw,
            rpn_scores,
            rpn_deltas,
            cls_maps: cls,
            box_maps: boxm,
            mask_maps: mask,
        })
    }

    /// Image-frame ROI -> feature-frame pooling window.
    fn roi_to_feature(&self, roi: &Rect) -> PsRoi {
        let s = self.config.stride() as f64;
        PsRoi::new(roi.x0 / s, roi.y0 / s, roi.x1 / s, roi.y1 / s)
    }

    /// Classification and box heads over one ROI.
    pub fn roi_heads(
        &self,
        g: &mut Graph<f32>,
        bound: &Binding,
        maps: &DetectorMaps,
        roi: &Rect,
    ) -> Result<RoiHeads> {
        let k = self.config.k_bins;
        let spec = PsMapSpec::new(k, 2);
        let ps_roi = self.roi_to_feature(roi);
        let pooled_std = ops::psroi_pool(g, maps.cls_maps, ps_roi, spec)?;
        let basis = ops::reshape(g, pooled_std, vec![2 * k * k])?;
        let pooled = match &self.cls_offset_fc {
            Some(fc) => {
                let off = fc.forward(g, bound, basis)?;
                let off = ops::reshape(g, off, vec![2, k, k])?;
                ops::deformable_psroi_pool(g, maps.cls_maps, ps_roi, off, spec, self.config.gamma)?
            }
            None => pooled_std,
        };
        let summed = ops::sum_trailing(g, pooled);
        let cls_logits = ops::scale(g, summed, 1.0 / (k * k) as f64);

        let box_spec = PsMapSpec::new(k, 4);
        let pooled_box = ops::psroi_pool(g, maps.box_maps, ps_roi, box_spec)?;
        let summed_box = ops::sum_trailing(g, pooled_box);
        let box_deltas = ops::scale(g, summed_box, 1.0 / (k * k) as f64);
        Ok(RoiHeads { cls_logits, box_deltas, cls_basis: basis })
    }

    /// Mask head over one ROI; `cls_basis` drives the pooling offsets.
    pub fn roi_mask(
        &self,
        g: &mut Graph<f32>,
        bound: &Binding,
        maps: &DetectorMaps,
        roi: &Rect,
        cls_basis: TensorId,
    ) -> Result<TensorId> {
        let r = self.config.mask_resolution;
        let spec = PsMapSpec::new(r, 1);
        let ps_roi = self.roi_to_feature(roi);
        let pooled = match &self.mask_offset_fc {
            Some(fc) => {
                let off = fc.forward(g, bound, cls_basis)?;
                let off = ops::reshape(g, off, vec![2, r, r])?;
                ops::deformable_psroi_pool(g, maps.mask_maps, ps_roi, off, spec, self.config.gamma)?
            }
            None => ops::psroi_pool(g, maps.mask_maps, ps_roi, spec)?,
        };
        ops::reshape(g, pooled, vec![r * r])
    }

    /// Per-anchor foreground probabilities from the RPN score map values.
    pub fn anchor_scores(&self, g: &Graph<f32>, maps: &DetectorMaps) -> Vec<f64> {
        let (fh, fw) = (maps.feature_h, maps.feature_w);
        let data = g.value(maps.rpn_scores).data();
        let plane = fh * fw;
        let mut out = Vec::with_capacity(plane * ANCHORS_PER_CELL);
        for y in 0..fh {
            for x in 0..fw {
                for a in 0..ANCHORS_PER_CELL {
                    let bg = data[(2 * a) * plane + y * fw + x] as f64;
                    let fg = data[(2 * a + 1) * plane + y * fw + x] as f64;
                    let m = bg.max(fg);
                    let eb = (bg - m).exp();
                    let ef = (fg - m).exp();
                    out.push(ef / (eb + ef));
                }
            }
        }
        out
    }

    /// Per-anchor box deltas from the RPN delta map values.
    pub fn anchor_deltas(&self, g: &Graph<f32>, maps: &DetectorMaps) -> Vec<[f64; 4]> {
        let (fh, fw) = (maps.feature_h, maps.feature_w);
        let data = g.value(maps.rpn_deltas).data();
        let plane = fh * fw;
        let mut out = Vec::with_capacity(plane * ANCHORS_PER_CELL);
        for y in 0..fh {
            for x in 0..fw {
                for a in 0..ANCHORS_PER_CELL {
                    let mut d = [0.0f64; 4];
                    for (c, slot) in d.iter_mut().enumerate() {
                        *slot = data[(4 * a + c) * plane + y * fw + x] as f64;
                    }
                    out.push(d);
                }
            }
        }
        out
    }

    /// Flat index of anchor slot `a` at cell (y, x) for the score/delta
    /// gather during training.
    pub fn anchor_logit_indices(
        &self,
        maps: &DetectorMaps,
        y: usize,
        x: usize,
        a: usize,
    ) -> [usize; 2] {
        let plane = maps.feature_h * maps.feature_w;
        let pos = y * maps.feature_w + x;
        [(2 * a) * plane + pos, (2 * a + 1) * plane + pos]
    }

    pub fn anchor_delta_indices(
        &self,
        maps: &DetectorMaps,
        y: usize,
        x: usize,
        a: usize,
    ) -> [usize; 4] {
        let plane = maps.feature_h * maps.feature_w;
        let pos = y * maps.feature_w + x;
        [
            (4 * a) * plane + pos,
            (4 * a + 1) * plane + pos,
            (4 * a + 2) * plane + pos,
            (4 * a + 3) * plane + pos,
        ]
    }

    pub fn anchors_for(&self, maps: &DetectorMaps) -> Vec<Anchor> {
        generate_anchors(maps.feature_h, maps.feature_w, self.config.stride())
    }

    /// Region proposals from the current RPN outputs (no gradients).
    pub fn propose(
        &self,
        g: &Graph<f32>,
        maps: &DetectorMaps,
        image_w: f64,
        image_h: f64,
        cfg: &ProposalConfig,
    ) -> Vec<RoiBox> {
        let anchors = self.anchors_for(maps);
        let scores = self.anchor_scores(g, maps);
        let deltas = self.anchor_deltas(g, maps);
        select_proposals(&scores, &deltas, &anchors, image_w, image_h, cfg)
    }

    /// Run the full pipeline on a (3,H,W) image in [0,1].
    pub fn detect(&self, image: &Tensor<f32>) -> Result<Vec<Detection>> {
        let shape = image.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(invalid!("detect expects a (3,H,W) image, got {shape:?}"));
        }
        let (h, w) = (shape[1], shape[2]);
        let mut g: Graph<f32> = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let image_id = {
            let batched = image.clone().reshaped(vec![1, 3, h, w])?;
            g.constant(batched)
        };
        let maps = self.forward_maps(&mut g, &bound, image_id)?;
        let proposals = self.propose(&g, &maps, w as f64, h as f64, &self.config.proposals);

        struct Candidate {
            quad: Quadrilateral,
            score: f64,
            mask: MaskGrid,
            rect: Rect,
        }
        let mut candidates: Vec<Candidate> = Vec::new();
        for proposal in &proposals {
            let heads = self.roi_heads(&mut g, &bound, &maps, &proposal.rect)?;
            let logits = g.value(heads.cls_logits).data();
            let score = softmax2(logits[0] as f64, logits[1] as f64);
            if score < self.config.score_threshold {
                continue;
            }
            let d = g.value(heads.box_deltas).data();
            let deltas = [d[0] as f64, d[1] as f64, d[2] as f64, d[3] as f64];
            let Ok(refined) = decode_box(&deltas, &proposal.rect) else {
                continue;
            };
            let refined = Rect::new(
                refined.x0.clamp(0.0, w as f64 - 1.0),
                refined.y0.clamp(0.0, h as f64 - 1.0),
                refined.x1.clamp(0.0, w as f64 - 1.0),
                refined.y1.clamp(0.0, h as f64 - 1.0),
            );
            if refined.width() < 2.0 || refined.height() < 2.0 {
                continue;
            }
            // mask pooled over the refined window, offsets re-derived there
            let refined_heads = self.roi_heads(&mut g, &bound, &maps, &refined)?;
            let mask_logits = self.roi_mask(&mut g, &bound, &maps, &refined, refined_heads.cls_basis)?;
            let r = self.config.mask_resolution;
            let mask_data: Vec<f64> = g
                .value(mask_logits)
                .data()
                .iter()
                .map(|&v| 1.0 / (1.0 + (-v as f64).exp()))
                .collect();
            let mask = MaskGrid::new(r, r, mask_data)?;
            let Ok(quad) = refined.to_quad() else {
                continue;
            };
            candidates.push(Candidate { quad, score, mask, rect: refined });
        }

        let scored: Vec<(Quadrilateral, f64)> =
            candidates.iter().map(|c| (c.quad, c.score)).collect();
        let nms = nms_quads(&scored, self.config.nms_iou);

        let mut detections = Vec::with_capacity(nms.kept.len());
        for &ki in &nms.kept {
            let kept = &candidates[ki];
            let kept_mask = ScoredMask {
                mask: &kept.mask,
                frame: kept.rect,
                quad: kept.quad,
                score: kept.score,
            };
            let similar: Vec<ScoredMask> = nms
                .suppressed
                .iter()
                .filter(|(_, by)| *by == ki)
                .map(|(si, _)| {
                    let s = &candidates[*si];
                    ScoredMask { mask: &s.mask, frame: s.rect, quad: s.quad, score: s.score }
                })
                .collect();
            let merged = merge_similar_masks(&kept_mask, &similar, self.config.merge_iou);
            let quad = match min_area_quadrilateral(&merged, self.config.mask_binarize, kept.rect)
            {
                Ok(q) => q,
                Err(crate::error::Error::NoInstance) => continue,
                Err(e) => return Err(e),
            };
            let clipped = clip_quad_to_image(&quad, w as f64, h as f64)?;
            detections.push(Detection {
                quad: clipped,
                score: kept.score,
                mask: merged,
                roi: RoiBox { rect: kept.rect, score: kept.score },
            });
        }
        Ok(detections)
    }
}

fn softmax2(bg: f64, fg: f64) -> f64 {
    let m = bg.max(fg);
    let eb = (bg - m).exp();
    let ef = (fg - m).exp();
    ef / (eb + ef)
}

/// Clamp quad vertices into the image; falls back to the clamped bounding
/// box if clamping degenerates the polygon.
fn clip_quad_to_image(quad: &Quadrilateral, w: f64, h: f64) -> Result<Quadrilateral> {
    let clamped: Vec<Point> = quad
        .corners
        .iter()
        .map(|p| Point::new(p.x.clamp(0.0, w - 1.0), p.y.clamp(0.0, h - 1.0)))
        .collect();
    match Quadrilateral::from_corners([clamped[0], clamped[1], clamped[2], clamped[3]]) {
        Ok(q) => Ok(q),
        Err(_) => {
            let b = quad.bounds();
            Rect::new(
                b.x0.clamp(0.0, w - 2.0),
                b.y0.clamp(0.0, h - 2.0),
                b.x1.clamp(1.0, w - 1.0).max(b.x0.clamp(0.0, w - 2.0) + 1.0),
                b.y1.clamp(1.0, h - 1.0).max(b.y0.clamp(0.0, h - 2.0) + 1.0),
            )
            .to_quad()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_detector(deformable: bool) -> DetectorModel {
        let config = DetectorConfig {
            backbone: BackboneConfig {
                stage_widths: [4, 6, 8, 8],
                final_dilation: 2,
                deformable,
            },
            k_bins: 3,
            mask_resolution: 8,
            rpn_channels: 8,
            ..DetectorConfig::default()
        };
        DetectorModel::new(config).unwrap()
    }

    #[test]
    fn random_model_detect_produces_valid_structure() {
        let model = tiny_detector(true);
        let image = Tensor::from_fn(vec![3, 64, 64], |i| ((i * 31) % 255) as f32 / 255.0);
        let detections = model.detect(&image).unwrap();
        for d in &detections {
            assert!((0.0..=1.0).contains(&d.score));
            assert_eq!(d.mask.width, 8);
            for p in &d.quad.corners {
                assert!(p.x >= 0.0 && p.x <= 63.0);
                assert!(p.y >= 0.0 && p.y <= 63.0);
            }
        }
        // scores sorted descending
        assert!(detections.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn score_threshold_one_gives_empty_list() {
        let mut model = tiny_detector(true);
        model.config.score_threshold = 1.0;
        let image = Tensor::from_fn(vec![3, 64, 64], |i| ((i * 7) % 200) as f32 / 255.0);
        assert!(model.detect(&image).unwrap().is_empty());
    }

    #[test]
    fn detect_is_deterministic() {
        let model = tiny_detector(true);
        let image = Tensor::from_fn(vec![3, 64, 64], |i| ((i * 13) % 251) as f32 / 255.0);
        let a = model.detect(&image).unwrap();
        let b = model.detect(&image).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.quad, y.quad);
            assert_eq!(x.score, y.score);
            assert_eq!(x.mask.data, y.mask.data);
        }
    }

    #[test]
    fn ablation_variant_has_no_offset_parameters() {
        let full = tiny_detector(true);
        let plain = tiny_detector(false);
        assert!(full.params.lookup("head.cls_offset_fc.weight").is_some());
        assert!(plain.params.lookup("head.cls_offset_fc.weight").is_none());
        assert!(full.params.lookup("fuse_a.inception.left.offset.weight").is_some());
        assert!(plain.params.lookup("fuse_a.inception.left.offset.weight").is_none());
        assert!(plain.params.scalar_count() < full.params.scalar_count());
    }

    #[test]
    fn invalid_image_shape_rejected() {
        let model = tiny_detector(true);
        assert!(model.detect(&Tensor::zeros(vec![1, 64, 64])).is_err());
    }
}
