//! Position-sensitive ROI pooling and its deformable variant.
//!
//! The score map stack carries k*k groups of `channels_per_bin` channels;
//! bin (i, j) of the pooled output reads only from group i*k + j, so spatial
//! position is encoded in channel identity. The pooled response of a bin is
//! the average of bilinear samples over a fixed 2x2 sub-grid (n = 4). The
//! deformable variant displaces every sample of bin (i, j) by a learned
//! (dx, dy), scaled by `gamma` and the ROI extent.

use super::bilinear::{sample_plane, sample_plane_with_grads, scatter_plane};
use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, TensorId};
use crate::tensor::{Scalar, Tensor};

/// Bin grid layout of a position-sensitive map stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PsMapSpec {
    /// Bins per side; the pooled output is (channels_per_bin, k, k).
    pub k: usize,
    pub channels_per_bin: usize,
}

impl PsMapSpec {
    pub fn new(k: usize, channels_per_bin: usize) -> Self {
        PsMapSpec { k, channels_per_bin }
    }

    pub fn map_channels(&self) -> usize {
        self.k * self.k * self.channels_per_bin
    }
}

/// Axis-aligned ROI in the coordinate frame of the maps being pooled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsRoi {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PsRoi {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        PsRoi { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    fn validate(&self) -> Result<()> {
        if !(self.width() > 0.0 && self.height() > 0.0)
            || !self.x0.is_finite()
            || !self.y0.is_finite()
            || !self.x1.is_finite()
            || !self.y1.is_finite()
        {
            return Err(Error::DegenerateRoi { width: self.width(), height: self.height() });
        }
        Ok(())
    }
}

/// The fixed per-bin sample offsets: a 2x2 sub-grid at quarter points.
const SUB: [f64; 2] = [0.25, 0.75];
const INV_SAMPLES: f64 = 0.25;

fn check_maps<S: Scalar>(g: &Graph<S>, maps: TensorId, spec: &PsMapSpec) -> Result<(usize, usize)> {
    let shape = g.value(maps).shape();
    if shape.len() != 3 {
        return Err(invalid!("psroi maps must be (C,H,W), got {shape:?}"));
    }
    if shape[0] != spec.map_channels() {
        return Err(Error::ShapeMismatch {
            context: "psroi map channels (k*k*channels_per_bin)",
            left: vec![shape[0]],
            right: vec![spec.map_channels()],
        });
    }
    Ok((shape[1], shape[2]))
}

/// Sample positions of bin (i, j), given a per-bin displacement.
fn bin_samples(roi: &PsRoi, k: usize, i: usize, j: usize, dx: f64, dy: f64) -> [(f64, f64); 4] {
    let bw = roi.width() / k as f64;
    let bh = roi.height() / k as f64;
    let mut out = [(0.0, 0.0); 4];
    let mut idx = 0;
    for sy in SUB {
        for sx in SUB {
            let x = roi.x0 + (j as f64 + sx) * bw + dx;
            let y = roi.y0 + (i as f64 + sy) * bh + dy;
            out[idx] = (x, y);
            idx += 1;
        }
    }
    out
}

fn pool_forward<S: Scalar>(
    maps: &[S],
    h: usize,
    w: usize,
    spec: &PsMapSpec,
    roi: &PsRoi,
    delta: impl Fn(usize, usize) -> (f64, f64),
) -> Vec<S> {
    let (k, cpb) = (spec.k, spec.channels_per_bin);
    let inv = S::from_f64(INV_SAMPLES);
    let mut out = vec![S::ZERO; cpb * k * k];
    for i in 0..k {
        for j in 0..k {
            let (dx, dy) = delta(i, j);
            let samples = bin_samples(roi, k, i, j, dx, dy);
            let group = i * k + j;
            for c in 0..cpb {
                let plane = &maps[(group * cpb + c) * h * w..][..h * w];
                let mut acc = S::ZERO;
                for &(x, y) in &samples {
                    acc += sample_plane(plane, h, w, x, y);
                }
                out[(c * k + i) * k + j] = acc * inv;
            }
        }
    }
    out
}

fn pool_backward_maps<S: Scalar>(
    gout: &[S],
    dmaps: &mut [S],
    h: usize,
    w: usize,
    spec: &PsMapSpec,
    roi: &PsRoi,
    delta: impl Fn(usize, usize) -> (f64, f64),
) {
    let (k, cpb) = (spec.k, spec.channels_per_bin);
    let inv = S::from_f64(INV_SAMPLES);
    for i in 0..k {
        for j in 0..k {
            let (dx, dy) = delta(i, j);
            let samples = bin_samples(roi, k, i, j, dx, dy);
            let group = i * k + j;
            for c in 0..cpb {
                let gv = gout[(c * k + i) * k + j] * inv;
                let plane = &mut dmaps[(group * cpb + c) * h * w..(group * cpb + c + 1) * h * w];
                for &(x, y) in &samples {
                    scatter_plane(plane, h, w, x, y, gv);
                }
            }
        }
    }
}

/// Standard position-sensitive ROI pooling: (C,H,W) maps -> pooled
/// (channels_per_bin, k, k).
pub fn psroi_pool<S: Scalar>(
    g: &mut Graph<S>,
    maps: TensorId,
    roi: PsRoi,
    spec: PsMapSpec,
) -> Result<TensorId> {
    roi.validate()?;
    let (h, w) = check_maps(g, maps, &spec)?;
    let out = pool_forward(g.value(maps).data(), h, w, &spec, &roi, |_, _| (0.0, 0.0));
    let shape = vec![spec.channels_per_bin, spec.k, spec.k];
    Ok(g.push_op(
        Tensor::new(shape, out).expect("pool shape"),
        &[maps],
        Box::new(move |ctx| {
            if ctx.needs(maps) {
                let gout = ctx.out_grad().to_vec();
                let mut dmaps = vec![S::ZERO; spec.map_channels() * h * w];
                pool_backward_maps(&gout, &mut dmaps, h, w, &spec, &roi, |_, _| (0.0, 0.0));
                ctx.accumulate(maps, &dmaps);
            }
        }),
    ))
}

/// Deformable position-sensitive ROI pooling.
///
/// `offsets` has shape (2, k, k): plane 0 carries normalized dx, plane 1 dy.
/// The pixel displacement of bin (i, j) is `gamma * offsets * (roi_w, roi_h)`,
/// shared by the bin's four samples and all its channels. Differentiable in
/// the maps and the offsets.
pub fn deformable_psroi_pool<S: Scalar>(
    g: &mut Graph<S>,
    maps: TensorId,
    roi: PsRoi,
    offsets: TensorId,
    spec: PsMapSpec,
    gamma: f64,
) -> Result<TensorId> {
    roi.validate()?;
    if gamma < 0.0 {
        return Err(invalid!("gamma must be non-negative, got {gamma}"));
    }
    let (h, w) = check_maps(g, maps, &spec)?;
    let k = spec.k;
    if g.value(offsets).shape() != [2, k, k] {
        return Err(Error::ShapeMismatch {
            context: "deformable psroi offsets",
            left: g.value(offsets).shape().to_vec(),
            right: vec![2, k, k],
        });
    }
    let (sx, sy) = (gamma * roi.width(), gamma * roi.height());
    let off = g.value(offsets).data();
    let delta = |i: usize, j: usize| {
        (
            off[i * k + j].to_f64() * sx,
            off[k * k + i * k + j].to_f64() * sy,
        )
    };
    let out = pool_forward(g.value(maps).data(), h, w, &spec, &roi, delta);
    let shape = vec![spec.channels_per_bin, spec.k, spec.k];
    Ok(g.push_op(
        Tensor::new(shape, out).expect("pool shape"),
        &[maps, offsets],
        Box::new(move |ctx| {
            let off = ctx.value(offsets).data().to_vec();
            let delta = |i: usize, j: usize| {
                (
                    off[i * k + j].to_f64() * sx,
                    off[k * k + i * k + j].to_f64() * sy,
                )
            };
            if ctx.needs(maps) {
                let gout = ctx.out_grad().to_vec();
                let mut dmaps = vec![S::ZERO; spec.map_channels() * h * w];
                pool_backward_maps(&gout, &mut dmaps, h, w, &spec, &roi, delta);
                ctx.accumulate(maps, &dmaps);
            }
            if ctx.needs(offsets) {
                let cpb = spec.channels_per_bin;
                let inv = S::from_f64(INV_SAMPLES);
                let mut doff = vec![S::ZERO; 2 * k * k];
                {
                    let gout = ctx.out_grad();
                    let map_data = ctx.value(maps).data();
                    for i in 0..k {
                        for j in 0..k {
                            let (dx, dy) = delta(i, j);
                            let samples = bin_samples(&roi, k, i, j, dx, dy);
                            let group = i * k + j;
                            let mut ax = S::ZERO;
                            let mut ay = S::ZERO;
                            for c in 0..cpb {
                                let gv = gout[(c * k + i) * k + j] * inv;
                                let plane = &map_data[(group * cpb + c) * h * w..][..h * w];
                                for &(x, y) in &samples {
                                    let (_, gx, gy) = sample_plane_with_grads(plane, h, w, x, y);
                                    ax += gv * gx;
                                    ay += gv * gy;
                                }
                            }
                            // chain through the gamma * roi scaling
                            doff[i * k + j] = ax * S::from_f64(sx);
                            doff[k * k + i * k + j] = ay * S::from_f64(sy);
                        }
                    }
                }
                ctx.accumulate(offsets, &doff);
            }
        }),
    ))
}
