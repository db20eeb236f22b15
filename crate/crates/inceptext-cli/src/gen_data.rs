//! `gen-data`: write a synthetic dataset directory.

use crate::options::{runtime, CliError, Options};
use inceptext::data::{write_dataset, SceneConfig};

pub fn run(opts: &Options) -> Result<(), CliError> {
    let out = opts.required_path("out")?;
    let count = opts.usize_in("count", 200, 1, 1_000_000)?;
    let defaults = SceneConfig::default();
    let config = SceneConfig {
        width: opts.usize_in("width", defaults.width, 32, 4096)?,
        height: opts.usize_in("height", defaults.height, 32, 4096)?,
        min_boxes: opts.usize_in("min-boxes", defaults.min_boxes, 1, 64)?,
        max_boxes: opts.usize_in("max-boxes", defaults.max_boxes, 1, 64)?,
        contrast: opts.f64_in("contrast", defaults.contrast, 0.0, 0.8)?,
        noise: opts.f64_in("noise", defaults.noise, 0.0, 0.3)?,
        seed: opts.u64_value("seed", defaults.seed)?,
        short_side: (
            opts.f64_in("short-side-min", defaults.short_side.0, 2.0, 512.0)?,
            opts.f64_in("short-side-max", defaults.short_side.1, 2.0, 512.0)?,
        ),
        aspect: (
            opts.f64_in("aspect-min", defaults.aspect.0, 1.0, 32.0)?,
            opts.f64_in("aspect-max", defaults.aspect.1, 1.0, 32.0)?,
        ),
        ..defaults
    };
    opts.reject_unknown()?;
    let manifest = write_dataset(&config, count, &out).map_err(runtime)?;
    println!("wrote {} scenes to {}", manifest.count, out.display());
    Ok(())
}
