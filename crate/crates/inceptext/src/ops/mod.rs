//! Differentiable operators.
//!
//! Each function runs its forward computation eagerly, pushes the result onto
//! the graph and records a backward closure. No broadcasting: binary ops
//! demand equal shapes, scalar multiplication is the one exception.

mod bilinear;
mod conv;
mod deform_conv;
mod elementwise;
mod linear;
mod loss;
mod psroi;
mod upsample;

pub use bilinear::{bilinear_sample, sample_plane, sample_plane_with_grads};
pub use conv::{conv2d, factorized_conv, ConvSpec};
pub use deform_conv::deformable_conv2d;
pub use elementwise::{
    add, concat_channels, concat_flat, gather, mean_all, mul, relu, reshape, scale, sum_all,
    sum_trailing,
};
pub use linear::linear;
pub use loss::{binary_cross_entropy, smooth_l1, softmax_cross_entropy};
pub use psroi::{deformable_psroi_pool, psroi_pool, PsMapSpec, PsRoi};
pub use upsample::{upsample2x, UpsampleMode};
