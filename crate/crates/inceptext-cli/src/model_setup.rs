//! Shared model construction for the train / eval / infer commands.

use crate::options::{runtime, validation, CliError, Options};
use inceptext::backbone::BackboneConfig;
use inceptext::checkpoint;
use inceptext::detector::{DetectorConfig, DetectorModel};
use std::path::Path;

pub fn detector_config(opts: &Options, deformable: bool) -> Result<DetectorConfig, CliError> {
    let defaults = DetectorConfig::default();
    Ok(DetectorConfig {
        backbone: BackboneConfig { deformable, ..BackboneConfig::default() },
        score_threshold: opts.f64_in("score-threshold", defaults.score_threshold, 0.0, 1.0)?,
        nms_iou: opts.f64_in("nms-iou", defaults.nms_iou, 0.0, 1.0)?,
        merge_iou: opts.f64_in("merge-iou", defaults.merge_iou, 0.0, 1.0)?,
        mask_binarize: opts.f64_in("mask-binarize", defaults.mask_binarize, 0.0, 1.0)?,
        init_seed: opts.u64_value("seed", 0)?,
        ..defaults
    })
}

pub fn variant_flag(opts: &Options) -> Result<bool, CliError> {
    match opts.raw("variant").unwrap_or("full") {
        "full" => Ok(true),
        "plain" => Ok(false),
        other => Err(validation(format!(
            "--variant must be 'full' or 'plain', got {other:?}"
        ))),
    }
}

/// Build a model matching a checkpoint (the variant is recognized from the
/// stored parameter names) and load its weights.
pub fn load_model(opts: &Options, path: &Path) -> Result<DetectorModel, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| validation(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let entries = checkpoint::decode(&bytes).map_err(|e| validation(e.to_string()))?;
    let deformable = entries.iter().any(|(name, _)| name == "head.cls_offset_fc.weight");
    let config = detector_config(opts, deformable)?;
    let mut model = DetectorModel::new(config).map_err(runtime)?;
    checkpoint::load_into(&mut model.params, path).map_err(|e| validation(e.to_string()))?;
    Ok(model)
}
