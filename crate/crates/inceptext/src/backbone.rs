//! Fused feature extraction trunk.
//!
//! Five stacked 3x3 stages: four with stride 2, then a stride-1 stage whose
//! convolution is dilated so its resolution stays at the fourth stage's
//! (the hole algorithm). The stride-8 third-stage feature is fused with the
//! x2-upsampled fourth and fifth stage features; each fused map passes
//! through its own Inception-Text block. Fused map A feeds the region
//! proposal network, fused map B the position-sensitive heads.

use crate::error::{invalid, Result};
use crate::graph::{Graph, TensorId};
use crate::inception::{InceptionTextBlock, InceptionTextConfig};
use crate::layers::{Binding, ConvLayer, ParamSet};
use crate::ops::{self, ConvSpec, UpsampleMode};
use crate::rng::DetRng;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct BackboneConfig {
    /// Widths of the four stride-2 stages; the dilated fifth stage reuses the
    /// last width so the two fusion adds are well-formed.
    pub stage_widths: [usize; 4],
    /// Dilation of the final stage (>= 2 keeps its receptive field growing
    /// without downsampling).
    pub final_dilation: usize,
    /// With false, the Inception-Text blocks use plain convolution tails
    /// (the ablation variant).
    pub deformable: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { stage_widths: [32, 64, 128, 128], final_dilation: 2, deformable: true }
    }
}

impl BackboneConfig {
    /// Cumulative stride of the deepest stage; input sides must divide this.
    pub const TOTAL_STRIDE: usize = 16;
    /// Stride of the fused output maps.
    pub const FUSED_STRIDE: usize = 8;

    /// Channel width of the fused maps.
    pub fn fused_channels(&self) -> usize {
        self.stage_widths[2]
    }

    fn validate(&self) -> Result<()> {
        if self.stage_widths.contains(&0) {
            return Err(invalid!("stage widths must be positive: {:?}", self.stage_widths));
        }
        if self.stage_widths[2] != self.stage_widths[3] {
            return Err(invalid!(
                "fusion adds stage-3 ({}) to upsampled stage-4/5 ({}); widths must match",
                self.stage_widths[2],
                self.stage_widths[3]
            ));
        }
        if self.final_dilation < 2 {
            return Err(invalid!("final stage dilation must be >= 2, got {}", self.final_dilation));
        }
        Ok(())
    }
}

pub struct FusedBackbone {
    pub config: BackboneConfig,
    stages: Vec<ConvLayer>,
    block_rpn: InceptionTextBlock,
    block_head: InceptionTextBlock,
}

/// Graph handles produced by one backbone pass.
pub struct BackboneFeatures {
    /// Fused map A (stage-3 + up2(stage-4)) after its Inception-Text block.
    pub fused_rpn: TensorId,
    /// Fused map B (stage-3 + up2(stage-5)) after its Inception-Text block.
    pub fused_head: TensorId,
    pub stage3: TensorId,
    pub stage4: TensorId,
    pub stage5: TensorId,
}

impl FusedBackbone {
    pub fn init<S: Scalar>(
        ps: &mut ParamSet<S>,
        config: BackboneConfig,
        rng: &mut DetRng,
    ) -> Result<Self> {
        config.validate()?;
        let w = config.stage_widths;
        let mut stages = Vec::with_capacity(5);
        let mut in_c = 3;
        for (i, &out_c) in w.iter().enumerate() {
            stages.push(ConvLayer::init(
                ps,
                &format!("backbone.stage{}", i + 1),
                ConvSpec::square(3, 2, 1, in_c, out_c),
                rng,
            ));
            in_c = out_c;
        }
        // stage 5: stride 1, dilated, same resolution as stage 4
        let d = config.final_dilation;
        stages.push(ConvLayer::init(
            ps,
            "backbone.stage5",
            ConvSpec::square(3, 1, d, w[3], w[3]).with_dilation(d),
            rng,
        ));
        let block_cfg = InceptionTextConfig::for_channels(config.fused_channels())
            .with_deformable(config.deformable);
        let block_rpn = InceptionTextBlock::init(ps, "fuse_a.inception", block_cfg, rng)?;
        let block_head = InceptionTextBlock::init(ps, "fuse_b.inception", block_cfg, rng)?;
        Ok(FusedBackbone { config, stages, block_rpn, block_head })
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        bound: &Binding,
        image: TensorId,
    ) -> Result<BackboneFeatures> {
        let shape = g.value(image).shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(invalid!("backbone input must be (N,3,H,W), got {shape:?}"));
        }
        let (h, w) = (shape[2], shape[3]);
        let ts = BackboneConfig::TOTAL_STRIDE;
        if h % ts != 0 || w % ts != 0 {
            return Err(invalid!(
                "input {h}x{w} not divisible by the total stride {ts}"
            ));
        }
        let mut x = image;
        let mut feats = Vec::with_capacity(5);
        for stage in &self.stages {
            x = stage.forward(g, bound, x)?;
            x = ops::relu(g, x);
            feats.push(x);
        }
        let (stage3, stage4, stage5) = (feats[2], feats[3], feats[4]);

        let up4 = ops::upsample2x(g, stage4, UpsampleMode::Bilinear)?;
        let fused_a = ops::add(g, stage3, up4)?;
        let fused_a = self.block_rpn.forward(g, bound, fused_a)?;
        let fused_a = ops::relu(g, fused_a);

        let up5 = ops::upsample2x(g, stage5, UpsampleMode::Bilinear)?;
        let fused_b = ops::add(g, stage3, up5)?;
        let fused_b = self.block_head.forward(g, bound, fused_b)?;
        let fused_b = ops::relu(g, fused_b);

        Ok(BackboneFeatures {
            fused_rpn: fused_a,
            fused_head: fused_b,
            stage3,
            stage4,
            stage5,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn tiny_config() -> BackboneConfig {
        BackboneConfig { stage_widths: [4, 6, 8, 8], final_dilation: 2, deformable: true }
    }

    fn run(config: BackboneConfig, h: usize, w: usize) -> Result<Vec<Vec<usize>>> {
        let mut rng = DetRng::new(9);
        let mut ps: ParamSet<f32> = ParamSet::new();
        let bb = FusedBackbone::init(&mut ps, config, &mut rng)?;
        let mut g: Graph<f32> = Graph::new();
        let bound = ps.bind(&mut g, false);
        let img = g.constant(Tensor::from_fn(vec![1, 3, h, w], |i| (i % 7) as f32 * 0.1));
        let f = bb.forward(&mut g, &bound, img)?;
        Ok(vec![
            g.value(f.fused_rpn).shape().to_vec(),
            g.value(f.fused_head).shape().to_vec(),
            g.value(f.stage3).shape().to_vec(),
            g.value(f.stage4).shape().to_vec(),
            g.value(f.stage5).shape().to_vec(),
        ])
    }

    #[test]
    fn stride8_feature_from_64px_input() {
        let shapes = run(tiny_config(), 64, 64).unwrap();
        assert_eq!(shapes[0], vec![1, 8, 8, 8]);
        assert_eq!(shapes[1], vec![1, 8, 8, 8]);
    }

    #[test]
    fn dilated_final_stage_keeps_stage4_resolution() {
        let shapes = run(tiny_config(), 64, 96).unwrap();
        assert_eq!(shapes[3], shapes[4]);
        assert_eq!(shapes[3][2..], [4, 6]);
    }

    #[test]
    fn doubling_input_doubles_fused_maps() {
        let a = run(tiny_config(), 32, 32).unwrap();
        let b = run(tiny_config(), 64, 64).unwrap();
        assert_eq!(b[0][2], 2 * a[0][2]);
        assert_eq!(b[0][3], 2 * a[0][3]);
    }

    #[test]
    fn indivisible_input_rejected() {
        assert!(run(tiny_config(), 60, 64).is_err());
    }

    #[test]
    fn mismatched_fusion_widths_rejected() {
        let bad = BackboneConfig { stage_widths: [4, 6, 8, 12], final_dilation: 2, deformable: true };
        assert!(run(bad, 64, 64).is_err());
    }
}
