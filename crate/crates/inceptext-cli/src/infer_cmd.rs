//! `infer`: detect text in one PPM image and write the detection file.

use crate::model_setup::load_model;
use crate::options::{runtime, validation, CliError, Options};
use inceptext::data::{read_ppm, write_file_atomic, write_ppm};
use inceptext::geometry::{format_detection_file, Point, Quadrilateral};
use inceptext::tensor::Tensor;
use std::path::PathBuf;

pub fn run(opts: &Options) -> Result<(), CliError> {
    let checkpoint = opts.required_path("checkpoint")?;
    let image_path = opts.required_path("image")?;
    let out = opts.required_path("out")?;
    let dump_visuals = opts.bool_flag("dump-visuals")?;
    let model = load_model(opts, &checkpoint)?;
    let image = read_ppm(&image_path)
        .map_err(|e| validation(format!("image {}: {e}", image_path.display())))?;
    opts.reject_unknown()?;

    let (h, w) = (image.dim(1), image.dim(2));
    let stride = inceptext::backbone::BackboneConfig::TOTAL_STRIDE;
    let (padded, pad_left, pad_top) = pad_symmetric(&image, stride);
    let mut comments = Vec::new();
    if padded.dim(1) != h || padded.dim(2) != w {
        let pad_right = padded.dim(2) - w - pad_left;
        let pad_bottom = padded.dim(1) - h - pad_top;
        comments.push(format!(
            "padded left={pad_left} top={pad_top} right={pad_right} bottom={pad_bottom}"
        ));
    }

    let detections = model.detect(&padded).map_err(runtime)?;
    let mut lines: Vec<(Quadrilateral, f64)> = Vec::with_capacity(detections.len());
    for d in detections {
        let corners = d.quad.corners.map(|p| {
            Point::new(
                (p.x - pad_left as f64).clamp(0.0, w as f64 - 1.0),
                (p.y - pad_top as f64).clamp(0.0, h as f64 - 1.0),
            )
        });
        if let Ok(q) = Quadrilateral::from_corners(corners) {
            lines.push((q, d.score));
        }
    }
    write_file_atomic(&out, format_detection_file(&lines, &comments).as_bytes())
        .map_err(runtime)?;

    if dump_visuals {
        let vis_path = visuals_path(&out);
        let mut canvas = image.clone();
        for (quad, _) in &lines {
            draw_quad_outline(&mut canvas, quad);
        }
        write_ppm(&vis_path, &canvas).map_err(runtime)?;
        println!("wrote {} and {}", out.display(), vis_path.display());
    } else {
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn visuals_path(out: &std::path::Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".vis.ppm");
    PathBuf::from(name)
}

/// Zero-pad symmetrically so both sides divide the backbone stride.
fn pad_symmetric(image: &Tensor<f32>, stride: usize) -> (Tensor<f32>, usize, usize) {
    let (c, h, w) = (image.dim(0), image.dim(1), image.dim(2));
    let oh = h.div_ceil(stride) * stride;
    let ow = w.div_ceil(stride) * stride;
    if oh == h && ow == w {
        return (image.clone(), 0, 0);
    }
    let top = (oh - h) / 2;
    let left = (ow - w) / 2;
    let data = image.data();
    let mut out = vec![0.0f32; c * oh * ow];
    for ci in 0..c {
        for y in 0..h {
            let src = &data[(ci * h + y) * w..][..w];
            out[(ci * oh + y + top) * ow + left..][..w].copy_from_slice(src);
        }
    }
    (
        Tensor::new(vec![c, oh, ow], out).expect("padded shape"),
        left,
        top,
    )
}

/// 1-pixel red outline along the quad edges.
fn draw_quad_outline(image: &mut Tensor<f32>, quad: &Quadrilateral) {
    let (h, w) = (image.dim(1), image.dim(2));
    let plane = h * w;
    for i in 0..4 {
        let a = quad.corners[i];
        let b = quad.corners[(i + 1) % 4];
        let steps = ((b.x - a.x).abs().max((b.y - a.y).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = (a.x + (b.x - a.x) * t).round() as isize;
            let y = (a.y + (b.y - a.y) * t).round() as isize;
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                let idx = y as usize * w + x as usize;
                let data = image.data_mut();
                data[idx] = 1.0;
                data[plane + idx] = 0.0;
                data[2 * plane + idx] = 0.0;
            }
        }
    }
}
