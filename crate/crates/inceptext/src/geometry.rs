//! Exact polygon geometry and detection post-processing.
//!
//! Coordinates are image pixels, y pointing down. Quadrilaterals are stored
//! clockwise (as seen on screen) starting from the vertex with minimal x+y;
//! under the y-down axes that ordering makes the shoelace sum positive.

use crate::error::{invalid, Error, Result};

pub const DEDUP_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// z-component of (b - a) x (c - a).
fn cross(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Axis-aligned rectangle (the frame of an ROI or a mask).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn to_quad(&self) -> Result<Quadrilateral> {
        Quadrilateral::from_corners([
            Point::new(self.x0, self.y0),
            Point::new(self.x1, self.y0),
            Point::new(self.x1, self.y1),
            Point::new(self.x0, self.y1),
        ])
    }
}

/// Convex quadrilateral, clockwise from the top-left-most vertex.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrilateral {
    pub corners: [Point; 4],
}

impl Quadrilateral {
    /// Canonicalize (orientation and start vertex) and validate convexity.
    pub fn from_corners(mut corners: [Point; 4]) -> Result<Self> {
        if signed_area(&corners) < 0.0 {
            corners.swap(1, 3);
        }
        let start = (0..4)
            .min_by(|&i, &j| {
                let a = &corners[i];
                let b = &corners[j];
                (a.x + a.y, a.y, a.x)
                    .partial_cmp(&(b.x + b.y, b.y, b.x))
                    .expect("finite coordinates")
            })
            .expect("four corners");
        corners.rotate_left(start);
        let q = Quadrilateral { corners };
        q.validate()?;
        Ok(q)
    }

    fn validate(&self) -> Result<()> {
        let c = &self.corners;
        if c.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::NonFinite("quadrilateral corner"));
        }
        let area = signed_area(c);
        if area <= DEDUP_EPS {
            return Err(invalid!("quadrilateral area must be positive, got {area}"));
        }
        for i in 0..4 {
            let turn = cross(c[i], c[(i + 1) % 4], c[(i + 2) % 4]);
            if turn < -DEDUP_EPS {
                return Err(invalid!("quadrilateral is not convex/clockwise: turn {turn} at {i}"));
            }
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.corners).abs()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.corners.iter().enumerate().all(|(i, &a)| {
            let b = self.corners[(i + 1) % 4];
            cross(a, b, p) >= -DEDUP_EPS
        })
    }

    /// Axis-aligned bounding rectangle.
    pub fn bounds(&self) -> Rect {
        let xs = self.corners.iter().map(|p| p.x);
        let ys = self.corners.iter().map(|p| p.y);
        Rect {
            x0: xs.clone().fold(f64::INFINITY, f64::min),
            y0: ys.clone().fold(f64::INFINITY, f64::min),
            x1: xs.fold(f64::NEG_INFINITY, f64::max),
            y1: ys.fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Shoelace sum / 2; positive for screen-clockwise rings under y-down axes.
pub fn signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

/// Absolute polygon area; needs at least three vertices.
pub fn polygon_area(points: &[Point]) -> Result<f64> {
    if points.len() < 3 {
        return Err(invalid!("polygon_area needs >= 3 vertices, got {}", points.len()));
    }
    Ok(signed_area(points).abs())
}

/// Sutherland-Hodgman clip of a polygon against one convex clockwise clip
/// polygon. Output vertices within DEDUP_EPS of each other are merged.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut poly = subject.to_vec();
    for i in 0..clip.len() {
        if poly.is_empty() {
            return poly;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let mut next = Vec::with_capacity(poly.len() + 1);
        for j in 0..poly.len() {
            let p = poly[j];
            let q = poly[(j + 1) % poly.len()];
            let dp = cross(a, b, p);
            let dq = cross(a, b, q);
            if dp >= 0.0 {
                next.push(p);
            }
            if (dp > 0.0 && dq < 0.0) || (dp < 0.0 && dq > 0.0) {
                let t = dp / (dp - dq);
                next.push(Point::new(p.x + (q.x - p.x) * t, p.y + (q.y - p.y) * t));
            }
        }
        poly = next;
    }
    dedup_ring(poly)
}

fn dedup_ring(points: Vec<Point>) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(points.len());
    for p in points {
        if let Some(last) = out.last() {
            if (last.x - p.x).abs() <= DEDUP_EPS && (last.y - p.y).abs() <= DEDUP_EPS {
                continue;
            }
        }
        out.push(p);
    }
    while out.len() > 1 {
        let first = out[0];
        let last = *out.last().expect("non-empty");
        if (first.x - last.x).abs() <= DEDUP_EPS && (first.y - last.y).abs() <= DEDUP_EPS {
            out.pop();
        } else {
            break;
        }
    }
    out
}

/// Intersection-over-union of two convex quadrilaterals. The operands are
/// ordered canonically before clipping, so iou(a, b) == iou(b, a) exactly.
pub fn polygon_iou(a: &Quadrilateral, b: &Quadrilateral) -> f64 {
    let key = |q: &Quadrilateral| q.corners.map(|p| (p.x, p.y));
    let (first, second) = if key(a) <= key(b) { (a, b) } else { (b, a) };
    let inter = clip_convex(&first.corners, &second.corners);
    if inter.len() < 3 {
        return 0.0;
    }
    let ai = signed_area(&inter).abs();
    let union = first.area() + second.area() - ai;
    if union <= 0.0 {
        return 0.0;
    }
    (ai / union).clamp(0.0, 1.0)
}

/// Greedy score-descending suppression; records which kept item suppressed
/// each discarded one. Ties in score break by input order.
#[derive(Clone, Debug, Default)]
pub struct NmsOutcome {
    /// Indices of surviving items, score-descending.
    pub kept: Vec<usize>,
    /// (suppressed item, index of its suppressor) pairs.
    pub suppressed: Vec<(usize, usize)>,
}

pub fn nms_quads(items: &[(Quadrilateral, f64)], iou_threshold: f64) -> NmsOutcome {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&i, &j| {
        items[j]
            .1
            .partial_cmp(&items[i].1)
            .expect("finite scores")
            .then(i.cmp(&j))
    });
    let mut outcome = NmsOutcome::default();
    let mut taken = vec![false; items.len()];
    for (rank, &i) in order.iter().enumerate() {
        if taken[i] {
            continue;
        }
        outcome.kept.push(i);
        for &j in &order[rank + 1..] {
            if taken[j] {
                continue;
            }
            if polygon_iou(&items[i].0, &items[j].0) > iou_threshold {
                taken[j] = true;
                outcome.suppressed.push((j, i));
            }
        }
    }
    outcome
}

/// Instance probability mask over an ROI window; row-major, values in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct MaskGrid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl MaskGrid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(invalid!(
                "mask grid {width}x{height} does not match {} values",
                data.len()
            ));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid!("mask values must lie in [0,1]"));
        }
        Ok(MaskGrid { width, height, data })
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear read in cell units (cell (x, y) centered at (x, y)); zero
    /// outside.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        crate::ops::sample_plane(&self.data, self.height, self.width, x, y)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// A mask in its ROI frame plus the box and score used for merging.
pub struct ScoredMask<'a> {
    pub mask: &'a MaskGrid,
    pub frame: Rect,
    pub quad: Quadrilateral,
    pub score: f64,
}

/// Score-weighted pixelwise average of the kept mask and every suppressed
/// mask whose box overlaps the kept box by at least `iou_min`. Contributor
/// masks are bilinearly resampled into the kept ROI frame; points outside a
/// contributor's frame read as zero.
pub fn merge_similar_masks(kept: &ScoredMask, suppressed: &[ScoredMask], iou_min: f64) -> MaskGrid {
    let mut contributors: Vec<&ScoredMask> = vec![kept];
    for s in suppressed {
        if polygon_iou(&kept.quad, &s.quad) >= iou_min {
            contributors.push(s);
        }
    }
    let (w, h) = (kept.mask.width, kept.mask.height);
    let total: f64 = contributors.iter().map(|c| c.score).sum();
    if total <= 0.0 {
        return kept.mask.clone();
    }
    let mut data = vec![0.0; w * h];
    for (idx, slot) in data.iter_mut().enumerate() {
        let (cx, cy) = (idx % w, idx / w);
        // image-frame position of this cell center
        let px = kept.frame.x0 + (cx as f64 + 0.5) / w as f64 * kept.frame.width();
        let py = kept.frame.y0 + (cy as f64 + 0.5) / h as f64 * kept.frame.height();
        let mut acc = 0.0;
        for c in &contributors {
            let mx = (px - c.frame.x0) / c.frame.width() * c.mask.width as f64 - 0.5;
            let my = (py - c.frame.y0) / c.frame.height() * c.mask.height as f64 - 0.5;
            acc += c.score * c.mask.sample(mx, my);
        }
        *slot = (acc / total).clamp(0.0, 1.0);
    }
    MaskGrid { width: w, height: h, data }
}

/// Convex hull, counter-clockwise under y-down axes (monotone chain);
/// collinear points are dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).expect("finite coordinates"));
    pts.dedup_by(|a, b| (a.x - b.x).abs() <= DEDUP_EPS && (a.y - b.y).abs() <= DEDUP_EPS);
    if pts.len() < 3 {
        return pts;
    }
    let turn_ok = |chain: &[Point], p: Point| {
        let n = chain.len();
        cross(chain[n - 2], chain[n - 1], p) > DEDUP_EPS
    };
    let mut lower: Vec<Point> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && !turn_ok(&lower, p) {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && !turn_ok(&upper, p) {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Minimum-area enclosing rectangle of a point set (rotating calipers over
/// hull edges). Degenerate sets (all points within a line) fall back to the
/// axis-aligned bounding box inflated to a one-pixel minimum extent.
pub fn min_area_rect(points: &[Point]) -> Result<Quadrilateral> {
    if points.is_empty() {
        return Err(Error::NoInstance);
    }
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return inflated_bbox(points);
    }
    let mut best: Option<(f64, [Point; 4])> = None;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let len = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
        if len <= DEDUP_EPS {
            continue;
        }
        let dir = Point::new((b.x - a.x) / len, (b.y - a.y) / len);
        let nrm = Point::new(-dir.y, dir.x);
        let (mut u0, mut u1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let u = p.x * dir.x + p.y * dir.y;
            let v = p.x * nrm.x + p.y * nrm.y;
            u0 = u0.min(u);
            u1 = u1.max(u);
            v0 = v0.min(v);
            v1 = v1.max(v);
        }
        let area = (u1 - u0) * (v1 - v0);
        if best.as_ref().is_none_or(|(ba, _)| area < *ba) {
            let corner = |u: f64, v: f64| {
                Point::new(dir.x * u + nrm.x * v, dir.y * u + nrm.y * v)
            };
            best = Some((area, [corner(u0, v0), corner(u1, v0), corner(u1, v1), corner(u0, v1)]));
        }
    }
    match best {
        Some((_, corners)) => Quadrilateral::from_corners(corners),
        None => inflated_bbox(points),
    }
}

fn inflated_bbox(points: &[Point]) -> Result<Quadrilateral> {
    let mut r = Rect::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        r.x0 = r.x0.min(p.x);
        r.y0 = r.y0.min(p.y);
        r.x1 = r.x1.max(p.x);
        r.y1 = r.y1.max(p.y);
    }
    for (lo, hi) in [(&mut r.x0, &mut r.x1), (&mut r.y0, &mut r.y1)] {
        if *hi - *lo < 1.0 {
            let c = (*hi + *lo) / 2.0;
            *lo = c - 0.5;
            *hi = c + 0.5;
        }
    }
    r.to_quad()
}

/// Binarize a mask at `threshold`, map foreground cell centers into the image
/// frame of `roi`, and return their minimum-area enclosing rectangle.
pub fn min_area_quadrilateral(
    mask: &MaskGrid,
    threshold: f64,
    roi: Rect,
) -> Result<Quadrilateral> {
    if !(roi.width() > 0.0 && roi.height() > 0.0) {
        return Err(Error::DegenerateRoi { width: roi.width(), height: roi.height() });
    }
    let mut points = Vec::new();
    for cy in 0..mask.height {
        for cx in 0..mask.width {
            if mask.at(cx, cy) >= threshold {
                points.push(Point::new(
                    roi.x0 + (cx as f64 + 0.5) / mask.width as f64 * roi.width(),
                    roi.y0 + (cy as f64 + 0.5) / mask.height as f64 * roi.height(),
                ));
            }
        }
    }
    if points.is_empty() {
        return Err(Error::NoInstance);
    }
    min_area_rect(&points)
}

// ── Detection wire format ───────────────────────────────────────────────
// One detection per line: "x1,y1,x2,y2,x3,y3,x4,y4,score", clockwise
// vertices. Lines starting with '#' are comments.

pub fn format_detection_line(quad: &Quadrilateral, score: f64) -> String {
    let c = &quad.corners;
    format!(
        "{},{},{},{},{},{},{},{},{}",
        c[0].x, c[0].y, c[1].x, c[1].y, c[2].x, c[2].y, c[3].x, c[3].y, score
    )
}

pub fn parse_detection_line(line: &str) -> Result<(Quadrilateral, f64)> {
    let fields: Vec<&str> = line.trim().split(',').collect();
    if fields.len() != 9 {
        return Err(Error::Format(format!(
            "detection line needs 9 comma-separated fields, got {}: {line:?}",
            fields.len()
        )));
    }
    let mut vals = [0.0f64; 9];
    for (v, f) in vals.iter_mut().zip(&fields) {
        *v = f
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::Format(format!("bad number {f:?}: {e}")))?;
    }
    let quad = Quadrilateral::from_corners([
        Point::new(vals[0], vals[1]),
        Point::new(vals[2], vals[3]),
        Point::new(vals[4], vals[5]),
        Point::new(vals[6], vals[7]),
    ])?;
    Ok((quad, vals[8]))
}

/// Serialize detections; `comments` become leading '#' lines.
pub fn format_detection_file(detections: &[(Quadrilateral, f64)], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    for (q, s) in detections {
        out.push_str(&format_detection_line(q, *s));
        out.push('\n');
    }
    out
}

pub fn parse_detection_file(text: &str) -> Result<Vec<(Quadrilateral, f64)>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(parse_detection_line(t)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square_at(x: f64, y: f64) -> Quadrilateral {
        Quadrilateral::from_corners([
            Point::new(x, y),
            Point::new(x + 1.0, y),
            Point::new(x + 1.0, y + 1.0),
            Point::new(x, y + 1.0),
        ])
        .unwrap()
    }

    #[test]
    fn unit_square_area() {
        assert_eq!(unit_square_at(0.0, 0.0).area(), 1.0);
    }

    #[test]
    fn triangle_area() {
        let tri = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)];
        assert_eq!(polygon_area(&tri).unwrap(), 0.5);
        assert!(polygon_area(&tri[..2]).is_err());
    }

    #[test]
    fn area_is_rotation_invariant() {
        let quad = unit_square_at(2.0, 3.0);
        let (s, c) = crate::rng::sin_cos_portable(std::f64::consts::PI / 6.0);
        let rotated: Vec<Point> = quad
            .corners
            .iter()
            .map(|p| Point::new(p.x * c - p.y * s, p.x * s + p.y * c))
            .collect();
        assert!((polygon_area(&rotated).unwrap() - quad.area()).abs() < 1e-9);
    }

    #[test]
    fn iou_identical_disjoint_and_half_offset() {
        let a = unit_square_at(0.0, 0.0);
        assert!((polygon_iou(&a, &a) - 1.0).abs() < 1e-9);
        let far = unit_square_at(5.0, 5.0);
        assert_eq!(polygon_iou(&a, &far), 0.0);
        let half = unit_square_at(0.5, 0.0);
        assert!((polygon_iou(&a, &half) - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn iou_is_symmetric() {
        let a = unit_square_at(0.3, 0.7);
        let b = Quadrilateral::from_corners([
            Point::new(0.0, 0.5),
            Point::new(2.0, 0.0),
            Point::new(2.5, 1.5),
            Point::new(0.5, 2.0),
        ])
        .unwrap();
        assert_eq!(polygon_iou(&a, &b), polygon_iou(&b, &a));
    }

    #[test]
    fn counterclockwise_input_is_canonicalized() {
        let q = Quadrilateral::from_corners([
            Point::new(0.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
        ])
        .unwrap();
        assert!(signed_area(&q.corners) > 0.0);
        assert_eq!(q.corners[0], Point::new(0.0, 0.0));
    }

    #[test]
    fn non_convex_corners_rejected() {
        let bow_tie = Quadrilateral::from_corners([
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ]);
        assert!(bow_tie.is_err());
    }

    #[test]
    fn nms_keeps_first_of_identical_pair() {
        let items = vec![(unit_square_at(0.0, 0.0), 0.9), (unit_square_at(0.0, 0.0), 0.8)];
        let out = nms_quads(&items, 0.5);
        assert_eq!(out.kept, vec![0]);
        assert_eq!(out.suppressed, vec![(1, 0)]);
    }

    #[test]
    fn nms_keeps_all_disjoint() {
        let items = vec![
            (unit_square_at(0.0, 0.0), 0.5),
            (unit_square_at(3.0, 0.0), 0.9),
            (unit_square_at(6.0, 0.0), 0.7),
        ];
        let out = nms_quads(&items, 0.5);
        assert_eq!(out.kept, vec![1, 2, 0]);
        assert!(out.suppressed.is_empty());
    }

    #[test]
    fn merge_with_no_similar_boxes_returns_kept_mask() {
        let mask = MaskGrid::new(4, 4, vec![0.25; 16]).unwrap();
        let kept = ScoredMask {
            mask: &mask,
            frame: Rect::new(0.0, 0.0, 4.0, 4.0),
            quad: unit_square_at(0.0, 0.0),
            score: 0.9,
        };
        let merged = merge_similar_masks(&kept, &[], 0.5);
        assert_eq!(merged.data, mask.data);
    }

    #[test]
    fn merge_weighted_average_of_constant_masks() {
        // masks of constant 0 and 1 with scores 1 and 3 -> constant 0.75
        let zero = MaskGrid::new(3, 3, vec![0.0; 9]).unwrap();
        let one = MaskGrid::new(3, 3, vec![1.0; 9]).unwrap();
        let frame = Rect::new(0.0, 0.0, 3.0, 3.0);
        let quad = frame.to_quad().unwrap();
        let kept = ScoredMask { mask: &zero, frame, quad, score: 1.0 };
        let similar = ScoredMask { mask: &one, frame, quad, score: 3.0 };
        let merged = merge_similar_masks(&kept, &[similar], 0.5);
        for &v in &merged.data {
            assert!((v - 0.75).abs() < 1e-9);
        }
    }

    #[test]
    fn hull_contains_every_input_point() {
        let mut rng = crate::rng::DetRng::new(41);
        for _ in 0..50 {
            let points: Vec<Point> = (0..20)
                .map(|_| Point::new(rng.range_f64(-9.0, 9.0), rng.range_f64(-5.0, 12.0)))
                .collect();
            let hull = convex_hull(&points);
            assert!(hull.len() >= 3);
            for p in &points {
                // p must be on or inside the hull ring (ccw under y-down)
                for i in 0..hull.len() {
                    let a = hull[i];
                    let b = hull[(i + 1) % hull.len()];
                    let side = cross(a, b, *p);
                    assert!(side >= -1e-9, "point {p:?} outside hull edge {a:?}->{b:?}");
                }
            }
        }
    }

    #[test]
    fn min_area_rect_of_axis_aligned_points() {
        let mut pts = Vec::new();
        for y in 0..3 {
            for x in 0..5 {
                pts.push(Point::new(x as f64, y as f64));
            }
        }
        let rect = min_area_rect(&pts).unwrap();
        assert!((rect.area() - 8.0).abs() < 1e-9);
        let b = rect.bounds();
        assert!((b.x0, b.y0) == (0.0, 0.0) && (b.x1, b.y1) == (4.0, 2.0));
    }

    #[test]
    fn degenerate_points_inflate_to_unit_extent() {
        let pts = [Point::new(2.0, 3.0), Point::new(4.0, 3.0)];
        let rect = min_area_rect(&pts).unwrap();
        let b = rect.bounds();
        assert!((b.x1 - b.x0 - 2.0).abs() < 1e-9);
        assert!((b.y1 - b.y0 - 1.0).abs() < 1e-9);
        let single = min_area_rect(&[Point::new(1.0, 1.0)]).unwrap();
        assert!((single.area() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mask_quadrilateral_of_full_foreground_is_roi_bbox() {
        let mask = MaskGrid::new(4, 4, vec![1.0; 16]).unwrap();
        let roi = Rect::new(8.0, 8.0, 16.0, 16.0);
        let q = min_area_quadrilateral(&mask, 0.5, roi).unwrap();
        let b = q.bounds();
        // cell centers span half a cell inside the roi edge
        assert!((b.x0 - 9.0).abs() < 1e-9 && (b.x1 - 15.0).abs() < 1e-9);
    }

    #[test]
    fn empty_foreground_signals_no_instance() {
        let mask = MaskGrid::new(4, 4, vec![0.0; 16]).unwrap();
        let roi = Rect::new(0.0, 0.0, 4.0, 4.0);
        match min_area_quadrilateral(&mask, 0.5, roi) {
            Err(Error::NoInstance) => {}
            other => panic!("expected NoInstance, got {other:?}"),
        }
    }

    #[test]
    fn detection_lines_roundtrip() {
        let q = unit_square_at(1.25, 2.5);
        let line = format_detection_line(&q, 0.875);
        let (q2, s) = parse_detection_line(&line).unwrap();
        assert_eq!(q, q2);
        assert_eq!(s, 0.875);
        assert!(parse_detection_line("1,2,3").is_err());
    }

    #[test]
    fn detection_file_skips_comments() {
        let text = "# header note\n\n0,0,1,0,1,1,0,1,0.5\n";
        let dets = parse_detection_file(text).unwrap();
        assert_eq!(dets.len(), 1);
    }
}
