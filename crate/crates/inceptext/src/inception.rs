//! The Inception-Text feature block.
//!
//! Three parallel branches, each starting with a 1x1 channel reduction:
//! the left branch keeps the 1x1 view, the middle adds a factorized 3x3, the
//! right a factorized 5x5. Every branch ends in a deformable convolution
//! whose offsets come from a zero-initialized plain convolution on the branch
//! feature, so an untrained block behaves exactly like its rigid-grid
//! counterpart. Branch outputs are concatenated, projected back by a 1x1
//! convolution, and added to the input shortcut.

use crate::error::{invalid, Result};
use crate::graph::{Graph, TensorId};
use crate::layers::{Binding, ConvLayer, FactorizedConvLayer, ParamSet};
use crate::ops::{self, ConvSpec};
use crate::rng::DetRng;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct InceptionTextConfig {
    pub in_channels: usize,
    /// Output width of each branch's 1x1 reduction.
    pub reduce_channels: usize,
    /// Kernel size of the per-branch deformable convolution (odd).
    pub deform_kernel: usize,
    /// Width after the final 1x1 projection; must equal `in_channels` so the
    /// shortcut add is well-formed.
    pub out_channels: usize,
    /// With false, the branch tails become plain convolutions of the same
    /// kernel size (the ablation variant).
    pub deformable: bool,
}

impl InceptionTextConfig {
    /// Quarter-width branches, 3x3 deformable tail.
    pub fn for_channels(channels: usize) -> Self {
        InceptionTextConfig {
            in_channels: channels,
            reduce_channels: (channels / 4).max(1),
            deform_kernel: 3,
            out_channels: channels,
            deformable: true,
        }
    }

    pub fn with_deformable(mut self, deformable: bool) -> Self {
        self.deformable = deformable;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.out_channels != self.in_channels {
            return Err(invalid!(
                "shortcut add needs out_channels == in_channels, got {} vs {}",
                self.out_channels,
                self.in_channels
            ));
        }
        if self.deform_kernel.is_multiple_of(2) || self.deform_kernel == 0 {
            return Err(invalid!("deform_kernel must be odd, got {}", self.deform_kernel));
        }
        if self.reduce_channels == 0 {
            return Err(invalid!("reduce_channels must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Left,
    Middle,
    Right,
}

pub const BRANCHES: [Branch; 3] = [Branch::Left, Branch::Middle, Branch::Right];

impl Branch {
    fn tag(self) -> &'static str {
        match self {
            Branch::Left => "left",
            Branch::Middle => "middle",
            Branch::Right => "right",
        }
    }

    fn index(self) -> usize {
        match self {
            Branch::Left => 0,
            Branch::Middle => 1,
            Branch::Right => 2,
        }
    }
}

struct BranchParams {
    reduce: ConvLayer,
    trunk: Option<FactorizedConvLayer>,
    /// Present only in the deformable variant.
    offset_conv: Option<ConvLayer>,
    deform: ConvLayer,
}

pub struct InceptionTextBlock {
    pub config: InceptionTextConfig,
    branches: [BranchParams; 3],
    project: ConvLayer,
}

impl InceptionTextBlock {
    pub fn init<S: Scalar>(
        ps: &mut ParamSet<S>,
        prefix: &str,
        config: InceptionTextConfig,
        rng: &mut DetRng,
    ) -> Result<Self> {
        config.validate()?;
        let r = config.reduce_channels;
        let dk = config.deform_kernel;
        let mut branches = Vec::with_capacity(3);
        for branch in BRANCHES {
            let tag = branch.tag();
            let reduce = ConvLayer::init(
                ps,
                &format!("{prefix}.{tag}.reduce"),
                ConvSpec::square(1, 1, 0, config.in_channels, r),
                rng,
            );
            let trunk = match branch {
                Branch::Left => None,
                Branch::Middle => Some(FactorizedConvLayer::init(
                    ps,
                    &format!("{prefix}.{tag}.trunk"),
                    3,
                    r,
                    r,
                    rng,
                )),
                Branch::Right => Some(FactorizedConvLayer::init(
                    ps,
                    &format!("{prefix}.{tag}.trunk"),
                    5,
                    r,
                    r,
                    rng,
                )),
            };
            let offset_conv = config.deformable.then(|| {
                ConvLayer::init_zero(
                    ps,
                    &format!("{prefix}.{tag}.offset"),
                    ConvSpec::square(3, 1, 1, r, 2 * dk * dk),
                )
            });
            let deform = ConvLayer::init(
                ps,
                &format!("{prefix}.{tag}.deform"),
                ConvSpec::square(dk, 1, dk / 2, r, r),
                rng,
            );
            branches.push(BranchParams { reduce, trunk, offset_conv, deform });
        }
        let branches: [BranchParams; 3] = branches
            .try_into()
            .unwrap_or_else(|_| unreachable!("exactly three branches"));
        let project = ConvLayer::init(
            ps,
            &format!("{prefix}.project"),
            ConvSpec::square(1, 1, 0, 3 * r, config.out_channels),
            rng,
        );
        Ok(InceptionTextBlock { config, branches, project })
    }

    fn branch_forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        bound: &Binding,
        x: TensorId,
        branch: Branch,
    ) -> Result<TensorId> {
        let params = &self.branches[branch.index()];
        let mut feat = params.reduce.forward(g, bound, x)?;
        if let Some(trunk) = &params.trunk {
            feat = trunk.forward(g, bound, feat)?;
        }
        match &params.offset_conv {
            Some(offset_conv) => {
                let offsets = offset_conv.forward(g, bound, feat)?;
                ops::deformable_conv2d(
                    g,
                    feat,
                    offsets,
                    bound.id(params.deform.weight),
                    params.deform.bias.map(|b| bound.id(b)),
                    params.deform.spec,
                )
            }
            None => params.deform.forward(g, bound, feat),
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        bound: &Binding,
        x: TensorId,
    ) -> Result<TensorId> {
        if g.value(x).dim(1) != self.config.in_channels {
            return Err(crate::error::Error::ShapeMismatch {
                context: "inception block input channels",
                left: vec![g.value(x).dim(1)],
                right: vec![self.config.in_channels],
            });
        }
        let mut outs = Vec::with_capacity(3);
        for branch in BRANCHES {
            outs.push(self.branch_forward(g, bound, x, branch)?);
        }
        let merged = ops::concat_channels(g, &outs)?;
        let projected = self.project.forward(g, bound, merged)?;
        ops::add(g, projected, x)
    }
}

/// Side length of the input region whose gradient is nonzero when a single
/// output pixel of the given branch is probed, with offsets at zero.
///
/// With positive weights and no cancellation this is exactly the branch's
/// receptive field: 3 for the left branch, 5 for the middle, 7 for the right
/// (with the default 3x3 deformable tail).
pub fn branch_receptive_footprint(config: &InceptionTextConfig, branch: Branch) -> Result<usize> {
    config.validate()?;
    let mut rng = DetRng::new(0x0f00_7551);
    let mut ps: ParamSet<f64> = ParamSet::new();
    let block = InceptionTextBlock::init(&mut ps, "probe", *config, &mut rng)?;
    // positive weights everywhere rule out accidental cancellation; offset
    // convolutions stay zero so sampling sits on the regular grid
    for id in ps.ids() {
        let name = ps.name(id).to_string();
        if name.contains(".offset.") {
            continue;
        }
        let t = ps.get_mut(id);
        for v in t.data_mut().iter_mut() {
            *v = v.abs() + 0.05;
        }
    }

    let size = 4 * config.deform_kernel + 7;
    let mut g: Graph<f64> = Graph::new();
    let bound = ps.bind(&mut g, false);
    let input = g.input(
        Tensor::from_fn(vec![1, config.in_channels, size, size], |i| {
            0.3 + 0.001 * (i % 17) as f64
        }),
        true,
    );
    let out = block.branch_forward(&mut g, &bound, input, branch)?;
    let (oh, ow) = (g.value(out).dim(2), g.value(out).dim(3));
    let center = (oh / 2) * ow + ow / 2; // channel 0, center pixel
    let probe = ops::gather(&mut g, out, vec![center])?;
    g.backward(probe)?;
    let grad = g
        .grad(input)
        .ok_or_else(|| invalid!("probe input did not receive a gradient"))?;

    let (mut y_min, mut y_max, mut x_min, mut x_max) = (usize::MAX, 0usize, usize::MAX, 0usize);
    for c in 0..config.in_channels {
        for y in 0..size {
            for x in 0..size {
                if grad.at4(0, c, y, x).abs() > 1e-12 {
                    y_min = y_min.min(y);
                    y_max = y_max.max(y);
                    x_min = x_min.min(x);
                    x_max = x_max.max(x);
                }
            }
        }
    }
    if y_min == usize::MAX {
        return Err(invalid!("probe gradient is identically zero"));
    }
    let side_y = y_max - y_min + 1;
    let side_x = x_max - x_min + 1;
    Ok(side_y.max(side_x))
}

/// Gradient check of the whole block in f64. Offset convolutions get zero
/// weights but fractional biases, keeping every bilinear sample off the
/// integer lattice where its coordinate derivative would be one-sided.
pub fn gradcheck_block(config: &InceptionTextConfig, rng: &mut DetRng) -> Result<f64> {
    config.validate()?;
    let mut ps: ParamSet<f64> = ParamSet::new();
    let block = InceptionTextBlock::init(&mut ps, "blk", *config, rng)?;
    let fractions = [0.23, -0.31, 0.41, -0.27, 0.33, -0.39, 0.29, -0.21];
    for id in ps.ids() {
        if ps.name(id).contains(".offset.") && ps.name(id).ends_with(".bias") {
            let t = ps.get_mut(id);
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v = fractions[i % fractions.len()];
            }
        }
    }

    let spatial = 7;
    let input: Tensor<f64> = crate::tensor::random_uniform(
        rng,
        vec![1, config.in_channels, spatial, spatial],
        -1.0,
        1.0,
    );
    let mut leaves = vec![input];
    for id in ps.ids() {
        leaves.push(ps.get(id).clone());
    }
    let weights = crate::tensor::random_uniform(
        rng,
        vec![config.out_channels * spatial * spatial],
        0.25,
        1.75,
    );

    let build = move |g: &mut Graph<f64>, ids: &[TensorId]| -> Result<TensorId> {
        let bound = ps.binding_from_ids(&ids[1..])?;
        let y = block.forward(g, &bound, ids[0])?;
        let n = g.value(y).numel();
        let flat = ops::reshape(g, y, vec![n])?;
        let w = g.constant(weights.clone());
        let p = ops::mul(g, flat, w)?;
        Ok(ops::sum_all(g, p))
    };
    crate::gradcheck::compare_autodiff_fd(&build, &leaves, crate::gradcheck::FD_STEP)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> InceptionTextConfig {
        InceptionTextConfig {
            in_channels: 4,
            reduce_channels: 2,
            deform_kernel: 3,
            out_channels: 4,
            deformable: true,
        }
    }

    #[test]
    fn output_shape_matches_input() {
        let mut rng = DetRng::new(3);
        let mut ps: ParamSet<f32> = ParamSet::new();
        let block = InceptionTextBlock::init(&mut ps, "b", tiny_config(), &mut rng).unwrap();
        let mut g: Graph<f32> = Graph::new();
        let bound = ps.bind(&mut g, false);
        let x = g.constant(Tensor::from_fn(vec![1, 4, 9, 9], |i| (i % 13) as f32 * 0.1));
        let y = block.forward(&mut g, &bound, x).unwrap();
        assert_eq!(g.value(y).shape(), g.value(x).shape());
    }

    #[test]
    fn zero_weights_leave_only_the_shortcut() {
        let mut rng = DetRng::new(4);
        let mut ps: ParamSet<f32> = ParamSet::new();
        let block = InceptionTextBlock::init(&mut ps, "b", tiny_config(), &mut rng).unwrap();
        for id in ps.ids() {
            let t = ps.get_mut(id);
            for v in t.data_mut().iter_mut() {
                *v = 0.0;
            }
        }
        let mut g: Graph<f32> = Graph::new();
        let bound = ps.bind(&mut g, false);
        let x = g.constant(Tensor::from_fn(vec![1, 4, 6, 6], |i| i as f32 * 0.01 - 0.7));
        let y = block.forward(&mut g, &bound, x).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn mismatched_input_channels_rejected() {
        let mut rng = DetRng::new(5);
        let mut ps: ParamSet<f32> = ParamSet::new();
        let block = InceptionTextBlock::init(&mut ps, "b", tiny_config(), &mut rng).unwrap();
        let mut g: Graph<f32> = Graph::new();
        let bound = ps.bind(&mut g, false);
        let x = g.constant(Tensor::<f32>::zeros(vec![1, 5, 6, 6]));
        assert!(block.forward(&mut g, &bound, x).is_err());
    }

    #[test]
    fn residual_projection_width_must_match() {
        let bad = InceptionTextConfig {
            in_channels: 4,
            reduce_channels: 2,
            deform_kernel: 3,
            out_channels: 8,
            deformable: true,
        };
        let mut rng = DetRng::new(6);
        let mut ps: ParamSet<f32> = ParamSet::new();
        assert!(InceptionTextBlock::init(&mut ps, "b", bad, &mut rng).is_err());
    }

    #[test]
    fn footprints_grow_left_to_right() {
        let config = tiny_config();
        let left = branch_receptive_footprint(&config, Branch::Left).unwrap();
        let middle = branch_receptive_footprint(&config, Branch::Middle).unwrap();
        let right = branch_receptive_footprint(&config, Branch::Right).unwrap();
        assert_eq!(left, 3);
        assert_eq!(middle, 5);
        assert_eq!(right, 7);
        assert!(left < middle && middle < right);
    }
}
