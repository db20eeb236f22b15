//! `train`: fit a detector on a dataset directory, logging metrics and
//! writing checkpoints.

use crate::model_setup::{detector_config, variant_flag};
use crate::options::{runtime, validation, CliError, Options};
use inceptext::checkpoint;
use inceptext::data::{read_dataset, read_manifest, write_file_atomic};
use inceptext::detector::{run_training, scales_for_scene, DetectorModel, LossBreakdown, TrainConfig};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

fn metric_line(iteration: usize, lb: &LossBreakdown) -> String {
    format!(
        "iteration={} l_rcls={} l_rbox={} l_cls={} l_box={} l_mask={} total={}\n",
        iteration, lb.l_rcls, lb.l_rbox, lb.l_cls, lb.l_box, lb.l_mask, lb.total
    )
}

fn interval_checkpoint_path(base: &Path, iteration: usize) -> PathBuf {
    let mut name = base.as_os_str().to_owned();
    name.push(format!(".{iteration:06}"));
    PathBuf::from(name)
}

pub fn run(opts: &Options) -> Result<(), CliError> {
    let dataset = opts.required_path("dataset")?;
    let checkpoint_path = opts.required_path("checkpoint")?;
    let metrics_path = opts.required_path("out")?;
    let iterations = opts.usize_in("iterations", 2000, 0, 10_000_000)?;
    let lr = opts.f64_in("lr", 1e-3, 1e-8, 1.0)?;
    let lambda_m = opts.f64_in("lambda-m", 2.0, 0.0, 100.0)?;
    let seed = opts.u64_value("seed", 0)?;
    let log_interval = opts.usize_in("log-interval", 10, 1, 1_000_000)?;
    let checkpoint_interval = opts.usize_in("checkpoint-interval", 0, 0, 10_000_000)?;
    let deformable = variant_flag(opts)?;
    let detector_cfg = detector_config(opts, deformable)?;
    let manifest =
        read_manifest(&dataset).map_err(|e| validation(format!("dataset manifest: {e}")))?;
    opts.reject_unknown()?;

    let scenes = read_dataset(&dataset).map_err(runtime)?;
    let scene_side = manifest.config.width.min(manifest.config.height);
    let tc = TrainConfig {
        iterations,
        lr,
        lambda_m,
        seed,
        crop_scales: scales_for_scene(scene_side),
        ..TrainConfig::default()
    };

    let mut model = DetectorModel::new(detector_cfg).map_err(runtime)?;
    let mut log = String::new();
    run_training(&mut model, &scenes, &tc, |iteration, lb, model_now| {
        let shown = iteration + 1;
        if shown % log_interval == 0 || shown == tc.iterations {
            let _ = write!(log, "{}", metric_line(shown, lb));
        }
        if checkpoint_interval > 0 && shown % checkpoint_interval == 0 && shown < tc.iterations {
            checkpoint::save(
                &model_now.params,
                &interval_checkpoint_path(&checkpoint_path, shown),
            )?;
        }
        Ok(())
    })
    .map_err(runtime)?;

    checkpoint::save(&model.params, &checkpoint_path).map_err(runtime)?;
    write_file_atomic(&metrics_path, log.as_bytes()).map_err(runtime)?;
    println!(
        "trained {iterations} iterations; checkpoint {} metrics {}",
        checkpoint_path.display(),
        metrics_path.display()
    );
    Ok(())
}
