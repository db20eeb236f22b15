//! `eval`: run a checkpoint over a dataset and report precision / recall /
//! F-measure at a polygon-IoU threshold.

use crate::model_setup::load_model;
use crate::options::{runtime, validation, CliError, Options};
use inceptext::data::{read_dataset, write_file_atomic};
use inceptext::eval::{evaluate, EvalReport};
use inceptext::geometry::Quadrilateral;
use std::fmt::Write as _;

pub fn run(opts: &Options) -> Result<(), CliError> {
    let checkpoint = opts.required_path("checkpoint")?;
    let dataset = opts.required_path("dataset")?;
    let iou_threshold = opts.f64_in("iou-threshold", 0.5, 0.0, 1.0)?;
    let out = opts.path("out");
    let model = load_model(opts, &checkpoint)?;
    opts.reject_unknown()?;

    let scenes = read_dataset(&dataset).map_err(|e| validation(format!("dataset: {e}")))?;
    let detections: Vec<Vec<(Quadrilateral, f64)>> = run_detections(&model, &scenes)?;
    let gts: Vec<Vec<Quadrilateral>> = scenes.iter().map(|s| s.quads.clone()).collect();
    let report = evaluate(&detections, &gts, iou_threshold).map_err(runtime)?;

    print!("{}", summary(&report));
    if let Some(path) = out {
        write_file_atomic(&path, report_text(&report).as_bytes()).map_err(runtime)?;
    }
    Ok(())
}

fn run_detections(
    model: &inceptext::detector::DetectorModel,
    scenes: &[inceptext::data::AnnotatedScene],
) -> Result<Vec<Vec<(Quadrilateral, f64)>>, CliError> {
    inceptext::eval::detect_all(model, scenes).map_err(runtime)
}

fn summary(r: &EvalReport) -> String {
    format!(
        "precision={}\nrecall={}\nf_measure={}\niou_threshold={}\ndetections={}\nground_truth={}\nmatched={}\n",
        r.precision, r.recall, r.f_measure, r.iou_threshold, r.total_detections, r.total_gt,
        r.total_matched
    )
}

fn report_text(r: &EvalReport) -> String {
    let mut text = summary(r);
    for (i, matches) in r.per_image.iter().enumerate() {
        let mut parts = Vec::with_capacity(matches.len());
        for m in matches {
            parts.push(format!("{}:{}:{}", m.detection, m.gt, m.iou));
        }
        let _ = writeln!(text, "matches_{i} = {}", parts.join(","));
    }
    text
}
