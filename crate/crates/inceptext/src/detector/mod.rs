//! Two-stage oriented-text detection pipeline.

pub mod anchors;
pub mod model;
pub mod proposals;
pub mod targets;
pub mod train;

pub use anchors::{decode_box, encode_box, generate_anchors, Anchor};
pub use model::{Detection, DetectorConfig, DetectorModel};
pub use proposals::{select_proposals, ProposalConfig, RoiBox};
pub use targets::{
    assign_roi_targets, assign_rpn_targets, ohem_select, rasterize_quad_mask, AnchorLabel,
};
pub use train::{
    augment_scene, lr_at, run_training, scales_for_scene, train_iteration, Adam, LossBreakdown,
    TrainConfig,
};
