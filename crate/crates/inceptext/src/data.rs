//! Deterministic synthetic scenes: high-contrast rotated rectangles with a
//! striped, text-like interior over a noisy background.
//!
//! Every pixel is a pure function of (seed, scene index) built from 64-bit
//! integer mixing and a fixed sin/cos polynomial, then quantized to 8 bits,
//! so datasets are bitwise reproducible across platforms. Images are stored
//! as binary PPM (P6), annotations as ICDAR-style comma-separated corner
//! lines, and a manifest ties the pairs together with the config snapshot.

use crate::error::{invalid, Error, Result};
use crate::geometry::{polygon_iou, Point, Quadrilateral};
use crate::parallel::par_map_collect;
use crate::rng::{sin_cos_portable, DetRng};
use crate::tensor::Tensor;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub min_boxes: usize,
    pub max_boxes: usize,
    /// Short-side range of the rectangles, pixels.
    pub short_side: (f64, f64),
    /// long/short aspect ratio range.
    pub aspect: (f64, f64),
    /// Orientation range in degrees, (-90, 90].
    pub orientation_deg: (f64, f64),
    /// Required gap between mean foreground and mean background intensity.
    pub contrast: f64,
    /// Background noise amplitude.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 320,
            height: 320,
            min_boxes: 1,
            max_boxes: 4,
            short_side: (12.0, 80.0),
            aspect: (1.0, 8.0),
            orientation_deg: (-90.0, 90.0),
            contrast: 0.4,
            noise: 0.08,
            seed: 0,
        }
    }
}

impl SceneConfig {
    fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(invalid!("scene must be at least 16x16"));
        }
        if self.min_boxes == 0 || self.min_boxes > self.max_boxes {
            return Err(invalid!(
                "box count range [{}, {}] is invalid",
                self.min_boxes,
                self.max_boxes
            ));
        }
        if !(self.short_side.0 >= 2.0 && self.short_side.1 >= self.short_side.0) {
            return Err(invalid!("short side range {:?} is invalid", self.short_side));
        }
        if !(self.aspect.0 >= 1.0 && self.aspect.1 >= self.aspect.0) {
            return Err(invalid!("aspect range {:?} is invalid", self.aspect));
        }
        if !(0.0..=0.8).contains(&self.contrast) || !(0.0..=0.3).contains(&self.noise) {
            return Err(invalid!("contrast/noise outside supported range"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AnnotatedScene {
    /// (3, H, W) values in [0,1], quantized to the 8-bit grid.
    pub image: Tensor<f32>,
    pub quads: Vec<Quadrilateral>,
}

const MARGIN: f64 = 2.0;
const BG_BASE: f64 = 0.22;
const FG_HI: f64 = 0.92;
const FG_LO: f64 = 0.68;
const STRIPE_PERIOD: f64 = 3.0;
const MAX_ATTEMPTS: usize = 1000;

struct PlacedBox {
    quad: Quadrilateral,
    center: Point,
    dir: Point,
}

/// Deterministic scene for (config.seed, index).
pub fn generate_scene(config: &SceneConfig, index: u64) -> Result<AnnotatedScene> {
    config.validate()?;
    let mut rng = DetRng::new(config.seed).split(index.wrapping_add(1));
    let (w, h) = (config.width, config.height);

    let count = config.min_boxes + rng.below(config.max_boxes - config.min_boxes + 1);
    let mut placed: Vec<PlacedBox> = Vec::with_capacity(count);
    let mut attempts = 0;
    while placed.len() < count {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            if placed.len() >= config.min_boxes {
                break;
            }
            return Err(invalid!(
                "failed to place {} boxes in {MAX_ATTEMPTS} attempts (overcrowded config)",
                config.min_boxes
            ));
        }
        let short = rng.range_f64(config.short_side.0, config.short_side.1);
        let aspect = rng.range_f64(config.aspect.0, config.aspect.1);
        let max_long = (w.min(h) as f64) - 2.0 * (MARGIN + 1.0);
        let long = (short * aspect).min(max_long).max(short);
        // theta in (-90, 90] degrees
        let span = config.orientation_deg.1 - config.orientation_deg.0;
        let theta_deg = config.orientation_deg.1 - span * rng.uniform();
        let theta = theta_deg.to_radians();
        let (s, c) = sin_cos_portable(theta);
        let hx = (long * c.abs() + short * s.abs()) / 2.0;
        let hy = (long * s.abs() + short * c.abs()) / 2.0;
        let (x_lo, x_hi) = (hx + MARGIN, w as f64 - 1.0 - hx - MARGIN);
        let (y_lo, y_hi) = (hy + MARGIN, h as f64 - 1.0 - hy - MARGIN);
        if x_lo >= x_hi || y_lo >= y_hi {
            continue;
        }
        let center = Point::new(rng.range_f64(x_lo, x_hi), rng.range_f64(y_lo, y_hi));
        let dir = Point::new(c, s);
        let nrm = Point::new(-s, c);
        let (hl, hs) = (long / 2.0, short / 2.0);
        let quad = Quadrilateral::from_corners([
            Point::new(center.x - dir.x * hl - nrm.x * hs, center.y - dir.y * hl - nrm.y * hs),
            Point::new(center.x + dir.x * hl - nrm.x * hs, center.y + dir.y * hl - nrm.y * hs),
            Point::new(center.x + dir.x * hl + nrm.x * hs, center.y + dir.y * hl + nrm.y * hs),
            Point::new(center.x - dir.x * hl + nrm.x * hs, center.y - dir.y * hl + nrm.y * hs),
        ])?;
        if placed.iter().any(|p| polygon_iou(&p.quad, &quad) > 0.05) {
            continue;
        }
        placed.push(PlacedBox { quad, center, dir });
    }

    // background noise, one gray value per pixel
    let mut gray = vec![0.0f64; w * h];
    for v in gray.iter_mut() {
        *v = BG_BASE + config.noise * (2.0 * rng.uniform() - 1.0);
    }
    // foreground: striped fill along the long axis
    for b in &placed {
        let bounds = b.quad.bounds();
        let y_range = (bounds.y0.floor().max(0.0) as usize)..=((bounds.y1.ceil() as usize).min(h - 1));
        let x_range = (bounds.x0.floor().max(0.0) as usize)..=((bounds.x1.ceil() as usize).min(w - 1));
        for y in y_range {
            for x in x_range.clone() {
                let p = Point::new(x as f64, y as f64);
                if b.quad.contains(p) {
                    let along =
                        (p.x - b.center.x) * b.dir.x + (p.y - b.center.y) * b.dir.y;
                    let stripe = (along / STRIPE_PERIOD).floor() as i64;
                    gray[y * w + x] = if stripe.rem_euclid(2) == 0 { FG_HI } else { FG_LO };
                }
            }
        }
    }

    // quantize to the 8-bit grid so PPM round trips are lossless
    let image = Tensor::from_fn(vec![3, h, w], |i| {
        let v = gray[i % (w * h)];
        let q = (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor();
        (q / 255.0) as f32
    });
    Ok(AnnotatedScene { image, quads: placed.into_iter().map(|p| p.quad).collect() })
}

// ── PPM (P6, 8-bit) ─────────────────────────────────────────────────────

pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(invalid!("ppm image must be (3,H,W), got {shape:?}"));
    }
    let (h, w) = (shape[1], shape[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * w * h);
    let data = image.data();
    for i in 0..w * h {
        for c in 0..3 {
            let v = data[c * w * h + i].clamp(0.0, 1.0);
            out.push((v * 255.0 + 0.5) as u8);
        }
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        }
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated ppm header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(Error::Format("not a binary ppm (P6) file".into()));
    }
    let w: usize = token()?.parse().map_err(|_| Error::Format("bad ppm width".into()))?;
    let h: usize = token()?.parse().map_err(|_| Error::Format("bad ppm height".into()))?;
    let maxval: usize = token()?.parse().map_err(|_| Error::Format("bad ppm maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported ppm maxval {maxval}")));
    }
    pos += 1; // the single whitespace after maxval
    let need = 3 * w * h;
    if bytes.len() < pos + need {
        return Err(Error::Format("ppm pixel data truncated".into()));
    }
    let pixels = &bytes[pos..pos + need];
    Ok(Tensor::from_fn(vec![3, h, w], |i| {
        let c = i / (w * h);
        let p = i % (w * h);
        pixels[p * 3 + c] as f32 / 255.0
    }))
}

pub fn write_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    write_file_atomic(path, &encode_ppm(image)?)
}

pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    decode_ppm(&std::fs::read(path)?)
}

/// Write via a sibling temp file and rename, so failures never leave a
/// partial file at the destination.
pub fn write_file_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

// ── Annotations ─────────────────────────────────────────────────────────

pub fn format_annotation(quads: &[Quadrilateral]) -> String {
    let mut out = String::new();
    for q in quads {
        let c = &q.corners;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c[0].x, c[0].y, c[1].x, c[1].y, c[2].x, c[2].y, c[3].x, c[3].y
        );
    }
    out
}

pub fn parse_annotation(text: &str) -> Result<Vec<Quadrilateral>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = t.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Format(format!(
                "annotation line needs 8 coordinates, got {}: {t:?}",
                fields.len()
            )));
        }
        let mut vals = [0.0f64; 8];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f
                .trim()
                .parse()
                .map_err(|e| Error::Format(format!("bad coordinate {f:?}: {e}")))?;
        }
        out.push(Quadrilateral::from_corners([
            Point::new(vals[0], vals[1]),
            Point::new(vals[2], vals[3]),
            Point::new(vals[4], vals[5]),
            Point::new(vals[6], vals[7]),
        ])?);
    }
    Ok(out)
}

// ── Dataset directory ───────────────────────────────────────────────────

const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub config: SceneConfig,
    pub count: usize,
    /// (image file, annotation file) name pairs, in index order.
    pub pairs: Vec<(String, String)>,
}

fn image_name(i: usize) -> String {
    format!("img_{i:05}.ppm")
}

fn annotation_name(i: usize) -> String {
    format!("gt_{i:05}.txt")
}

/// Generate `count` scenes into `dir` (created if needed) plus the manifest.
pub fn write_dataset(config: &SceneConfig, count: usize, dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    if count == 0 {
        return Err(invalid!("dataset count must be positive"));
    }
    std::fs::create_dir_all(dir)?;
    let scenes = par_map_collect(count, |i| generate_scene(config, i as u64));
    let mut pairs = Vec::with_capacity(count);
    for (i, scene) in scenes.into_iter().enumerate() {
        let scene = scene?;
        let img = image_name(i);
        let gt = annotation_name(i);
        write_ppm(&dir.join(&img), &scene.image)?;
        write_file_atomic(&dir.join(&gt), format_annotation(&scene.quads).as_bytes())?;
        pairs.push((img, gt));
    }
    let manifest = DatasetManifest { config: *config, count, pairs };
    write_file_atomic(&dir.join(MANIFEST_NAME), format_manifest(&manifest).as_bytes())?;
    Ok(manifest)
}

fn format_manifest(m: &DatasetManifest) -> String {
    let c = &m.config;
    let mut out = String::from("format = inceptext-dataset-v1\n");
    let _ = writeln!(out, "count = {}", m.count);
    let _ = writeln!(out, "width = {}", c.width);
    let _ = writeln!(out, "height = {}", c.height);
    let _ = writeln!(out, "min_boxes = {}", c.min_boxes);
    let _ = writeln!(out, "max_boxes = {}", c.max_boxes);
    let _ = writeln!(out, "short_side = {} {}", c.short_side.0, c.short_side.1);
    let _ = writeln!(out, "aspect = {} {}", c.aspect.0, c.aspect.1);
    let _ = writeln!(out, "orientation_deg = {} {}", c.orientation_deg.0, c.orientation_deg.1);
    let _ = writeln!(out, "contrast = {}", c.contrast);
    let _ = writeln!(out, "noise = {}", c.noise);
    let _ = writeln!(out, "seed = {}", c.seed);
    for (img, gt) in &m.pairs {
        let _ = writeln!(out, "pair = {img} {gt}");
    }
    out
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let mut config = SceneConfig::default();
    let mut count = None;
    let mut pairs = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (key, value) = t
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("manifest line without '=': {t:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let parse_f = |v: &str| -> Result<f64> {
            v.parse().map_err(|e| Error::Format(format!("bad number {v:?}: {e}")))
        };
        let parse_pair = |v: &str| -> Result<(f64, f64)> {
            let mut it = v.split_whitespace();
            let a = parse_f(it.next().ok_or_else(|| Error::Format("missing value".into()))?)?;
            let b = parse_f(it.next().ok_or_else(|| Error::Format("missing value".into()))?)?;
            Ok((a, b))
        };
        match key {
            "format" => {
                if value != "inceptext-dataset-v1" {
                    return Err(Error::Format(format!("unknown dataset format {value:?}")));
                }
            }
            "count" => count = Some(parse_f(value)? as usize),
            "width" => config.width = parse_f(value)? as usize,
            "height" => config.height = parse_f(value)? as usize,
            "min_boxes" => config.min_boxes = parse_f(value)? as usize,
            "max_boxes" => config.max_boxes = parse_f(value)? as usize,
            "short_side" => config.short_side = parse_pair(value)?,
            "aspect" => config.aspect = parse_pair(value)?,
            "orientation_deg" => config.orientation_deg = parse_pair(value)?,
            "contrast" => config.contrast = parse_f(value)?,
            "noise" => config.noise = parse_f(value)?,
            "seed" => {
                config.seed = value
                    .parse()
                    .map_err(|e| Error::Format(format!("bad seed {value:?}: {e}")))?
            }
            "pair" => {
                let mut it = value.split_whitespace();
                let img = it.next().ok_or_else(|| Error::Format("pair missing image".into()))?;
                let gt = it
                    .next()
                    .ok_or_else(|| Error::Format("pair missing annotation".into()))?;
                pairs.push((img.to_string(), gt.to_string()));
            }
            other => return Err(Error::Format(format!("unknown manifest key {other:?}"))),
        }
    }
    let count = count.ok_or_else(|| Error::Format("manifest missing count".into()))?;
    if pairs.len() != count {
        return Err(Error::Format(format!(
            "manifest count {count} does not match {} pairs",
            pairs.len()
        )));
    }
    Ok(DatasetManifest { config, count, pairs })
}

/// Load every (image, annotation) pair listed in the manifest.
pub fn read_dataset(dir: &Path) -> Result<Vec<AnnotatedScene>> {
    let manifest = read_manifest(dir)?;
    let loaded = par_map_collect(manifest.pairs.len(), |i| -> Result<AnnotatedScene> {
        let (img, gt) = &manifest.pairs[i];
        let image = read_ppm(&dir.join(img))?;
        let quads = parse_annotation(&std::fs::read_to_string(dir.join(gt))?)?;
        Ok(AnnotatedScene { image, quads })
    });
    loaded.into_iter().collect()
}
