//! Dense anchor grid and box delta coding.

use crate::error::{invalid, Result};
use crate::geometry::Rect;

/// Anchor scales and height/width ratios; 16 anchors per feature cell.
pub const ANCHOR_SCALES: [f64; 4] = [2.0, 4.0, 8.0, 16.0];
pub const ANCHOR_RATIOS: [f64; 4] = [0.2, 0.5, 2.0, 5.0];
pub const ANCHORS_PER_CELL: usize = ANCHOR_SCALES.len() * ANCHOR_RATIOS.len();

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Anchor {
    pub fn rect(&self) -> Rect {
        Rect::new(
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }
}

/// Anchors for an (feature_h, feature_w) grid at the given stride, row-major
/// over cells, scale-major then ratio within a cell. With ratio r = h/w and
/// base = stride: w = base*s/sqrt(r), h = base*s*sqrt(r), so the area is
/// (base*s)^2 for every ratio.
pub fn generate_anchors(feature_h: usize, feature_w: usize, stride: usize) -> Vec<Anchor> {
    let base = stride as f64;
    let mut anchors = Vec::with_capacity(feature_h * feature_w * ANCHORS_PER_CELL);
    for y in 0..feature_h {
        for x in 0..feature_w {
            let cx = (x as f64 + 0.5) * base;
            let cy = (y as f64 + 0.5) * base;
            for s in ANCHOR_SCALES {
                for r in ANCHOR_RATIOS {
                    let sq = r.sqrt();
                    anchors.push(Anchor { cx, cy, w: base * s / sq, h: base * s * sq });
                }
            }
        }
    }
    anchors
}

/// Deltas (dx, dy, dw, dh): center shift normalized by the reference size,
/// log size ratios.
pub fn encode_box(target: &Rect, reference: &Rect) -> Result<[f64; 4]> {
    let (rw, rh) = (reference.width(), reference.height());
    if rw <= 0.0 || rh <= 0.0 {
        return Err(invalid!("reference box has non-positive extent {rw}x{rh}"));
    }
    let (tw, th) = (target.width(), target.height());
    if tw <= 0.0 || th <= 0.0 {
        return Err(invalid!("target box has non-positive extent {tw}x{th}"));
    }
    let rcx = (reference.x0 + reference.x1) / 2.0;
    let rcy = (reference.y0 + reference.y1) / 2.0;
    let tcx = (target.x0 + target.x1) / 2.0;
    let tcy = (target.y0 + target.y1) / 2.0;
    Ok([
        (tcx - rcx) / rw,
        (tcy - rcy) / rh,
        (tw / rw).ln(),
        (th / rh).ln(),
    ])
}

pub fn decode_box(deltas: &[f64; 4], reference: &Rect) -> Result<Rect> {
    let (rw, rh) = (reference.width(), reference.height());
    if rw <= 0.0 || rh <= 0.0 {
        return Err(invalid!("reference box has non-positive extent {rw}x{rh}"));
    }
    let rcx = (reference.x0 + reference.x1) / 2.0;
    let rcy = (reference.y0 + reference.y1) / 2.0;
    let cx = rcx + deltas[0] * rw;
    let cy = rcy + deltas[1] * rh;
    let w = rw * deltas[2].exp();
    let h = rh * deltas[3].exp();
    Ok(Rect::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0))
}

/// Intersection-over-union of axis-aligned boxes.
pub fn axis_iou(a: &Rect, b: &Rect) -> f64 {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = iw * ih;
    let union = a.width() * a.height() + b.width() * b.height() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
