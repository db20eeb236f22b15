//! Shared oracle implementations for the integration tests. Everything here
//! is written independently of the library code paths it checks.

#![allow(dead_code)]

use inceptext::geometry::{Point, Quadrilateral};
use inceptext::rng::DetRng;

/// Random convex quadrilateral: a rotated, sheared rectangle.
pub fn random_quad(rng: &mut DetRng, span: f64) -> Quadrilateral {
    let cx = rng.range_f64(span * 0.2, span * 0.8);
    let cy = rng.range_f64(span * 0.2, span * 0.8);
    let hw = rng.range_f64(span * 0.05, span * 0.3);
    let hh = rng.range_f64(span * 0.05, span * 0.3);
    let theta = rng.range_f64(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
    let shear = rng.range_f64(-0.4, 0.4);
    let (s, c) = inceptext::rng::sin_cos_portable(theta);
    let corner = |u: f64, v: f64| {
        // shear in local frame, then rotate, then translate
        let (lx, ly) = (u + shear * v, v);
        Point::new(cx + lx * c - ly * s, cy + lx * s + ly * c)
    };
    Quadrilateral::from_corners([
        corner(-hw, -hh),
        corner(hw, -hh),
        corner(hw, hh),
        corner(-hw, hh),
    ])
    .expect("sheared rectangle stays convex")
}

fn point_in_quad(q: &Quadrilateral, p: Point) -> bool {
    // plain half-plane test, written against the clockwise convention
    q.corners.iter().enumerate().all(|(i, &a)| {
        let b = q.corners[(i + 1) % 4];
        (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) >= 0.0
    })
}

/// Monte-Carlo IoU over the union bounding box.
pub fn monte_carlo_iou(a: &Quadrilateral, b: &Quadrilateral, samples: usize, rng: &mut DetRng) -> f64 {
    let (ba, bb) = (a.bounds(), b.bounds());
    let x0 = ba.x0.min(bb.x0);
    let y0 = ba.y0.min(bb.y0);
    let x1 = ba.x1.max(bb.x1);
    let y1 = ba.y1.max(bb.y1);
    let mut inter = 0usize;
    let mut union = 0usize;
    for _ in 0..samples {
        let p = Point::new(rng.range_f64(x0, x1), rng.range_f64(y0, y1));
        let ia = point_in_quad(a, p);
        let ib = point_in_quad(b, p);
        if ia && ib {
            inter += 1;
        }
        if ia || ib {
            union += 1;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Reference NMS: repeatedly scan for the best unsuppressed score.
pub fn reference_nms(
    items: &[(Quadrilateral, f64)],
    threshold: f64,
) -> (Vec<usize>, Vec<(usize, usize)>) {
    let n = items.len();
    let mut state = vec![0u8; n]; // 0 pending, 1 kept, 2 suppressed
    let mut kept = Vec::new();
    let mut suppressed = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if state[i] == 0 && best.is_none_or(|b| items[i].1 > items[b].1) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        state[b] = 1;
        kept.push(b);
        for i in 0..n {
            if state[i] == 0
                && inceptext::geometry::polygon_iou(&items[b].0, &items[i].0) > threshold
            {
                state[i] = 2;
                suppressed.push((i, b));
            }
        }
    }
    (kept, suppressed)
}

/// Minimum enclosing-rectangle area by brute force over every point-pair
/// orientation. The optimum aligns with a hull edge, and hull edges are a
/// subset of the point pairs, so the minimum over pairs is the true optimum
/// (no hull computation involved at all).
pub fn brute_force_min_rect_area(points: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    let mut any = false;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let (dx, dy) = (points[j].x - points[i].x, points[j].y - points[i].y);
            let len = (dx * dx + dy * dy).sqrt();
            if len < 1e-12 {
                continue;
            }
            any = true;
            let (c, s) = (dx / len, dy / len);
            let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
            let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in points {
                let rx = p.x * c + p.y * s;
                let ry = -p.x * s + p.y * c;
                x0 = x0.min(rx);
                x1 = x1.max(rx);
                y0 = y0.min(ry);
                y1 = y1.max(ry);
            }
            best = best.min((x1 - x0) * (y1 - y0));
        }
    }
    if any {
        best
    } else {
        0.0
    }
}

/// Fresh bilinear read (zero outside), used by the pooling oracles.
pub fn oracle_bilinear(plane: &[f32], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor() as isize;
    let y0 = y.floor() as isize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let read = |xx: isize, yy: isize| -> f64 {
        if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
            0.0
        } else {
            plane[yy as usize * w + xx as usize] as f64
        }
    };
    read(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + read(x0 + 1, y0) * fx * (1.0 - fy)
        + read(x0, y0 + 1) * (1.0 - fx) * fy
        + read(x0 + 1, y0 + 1) * fx * fy
}

/// Direct evaluation of the deformable pooled response: for bin (i, j) the
/// mean of bilinear samples on the 2x2 sub-grid, displaced by
/// gamma * offsets * (roi_w, roi_h).
#[allow(clippy::too_many_arguments)]
pub fn pooled_response_reference(
    maps: &[f32],
    h: usize,
    w: usize,
    k: usize,
    cpb: usize,
    roi: (f64, f64, f64, f64),
    offsets: &[f64],
    gamma: f64,
) -> Vec<f64> {
    let (x0, y0, x1, y1) = roi;
    let (rw, rh) = (x1 - x0, y1 - y0);
    let (bw, bh) = (rw / k as f64, rh / k as f64);
    let mut out = vec![0.0; cpb * k * k];
    for i in 0..k {
        for j in 0..k {
            let dx = gamma * offsets[i * k + j] * rw;
            let dy = gamma * offsets[k * k + i * k + j] * rh;
            let group = i * k + j;
            for c in 0..cpb {
                let plane = &maps[(group * cpb + c) * h * w..][..h * w];
                let mut acc = 0.0;
                for sy in [0.25, 0.75] {
                    for sx in [0.25, 0.75] {
                        let px = x0 + (j as f64 + sx) * bw + dx;
                        let py = y0 + (i as f64 + sy) * bh + dy;
                        acc += oracle_bilinear(plane, h, w, px, py);
                    }
                }
                out[(c * k + i) * k + j] = acc / 4.0;
            }
        }
    }
    out
}
