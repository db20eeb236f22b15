//! Bilinear interpolation on 2-D planes.
//!
//! Coordinates are in pixel units with pixel (ix, iy) centered at (ix, iy).
//! Neighbors outside [0, W-1] x [0, H-1] contribute zero, matching the
//! zero-padding semantics of the convolutions.

use crate::error::{invalid, Result};
use crate::graph::{Graph, TensorId};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy)]
pub(crate) struct Corners {
    pub x0: isize,
    pub y0: isize,
    pub fx: f64,
    pub fy: f64,
}

pub(crate) fn corners(x: f64, y: f64) -> Corners {
    let xf = x.floor();
    let yf = y.floor();
    Corners { x0: xf as isize, y0: yf as isize, fx: x - xf, fy: y - yf }
}

#[inline]
fn read<S: Scalar>(plane: &[S], h: usize, w: usize, x: isize, y: isize) -> S {
    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
        S::ZERO
    } else {
        plane[y as usize * w + x as usize]
    }
}

/// Bilinear read of one plane at fractional (x, y).
pub fn sample_plane<S: Scalar>(plane: &[S], h: usize, w: usize, x: f64, y: f64) -> S {
    let c = corners(x, y);
    let p00 = read(plane, h, w, c.x0, c.y0);
    let p10 = read(plane, h, w, c.x0 + 1, c.y0);
    let p01 = read(plane, h, w, c.x0, c.y0 + 1);
    let p11 = read(plane, h, w, c.x0 + 1, c.y0 + 1);
    let fx = S::from_f64(c.fx);
    let fy = S::from_f64(c.fy);
    let top = p00 + (p10 - p00) * fx;
    let bot = p01 + (p11 - p01) * fx;
    top + (bot - top) * fy
}

/// Bilinear read plus partial derivatives w.r.t. the coordinates.
pub fn sample_plane_with_grads<S: Scalar>(
    plane: &[S],
    h: usize,
    w: usize,
    x: f64,
    y: f64,
) -> (S, S, S) {
    let c = corners(x, y);
    let p00 = read(plane, h, w, c.x0, c.y0);
    let p10 = read(plane, h, w, c.x0 + 1, c.y0);
    let p01 = read(plane, h, w, c.x0, c.y0 + 1);
    let p11 = read(plane, h, w, c.x0 + 1, c.y0 + 1);
    let fx = S::from_f64(c.fx);
    let fy = S::from_f64(c.fy);
    let top = p00 + (p10 - p00) * fx;
    let bot = p01 + (p11 - p01) * fx;
    let value = top + (bot - top) * fy;
    let one = S::ONE;
    let dx = (p10 - p00) * (one - fy) + (p11 - p01) * fy;
    let dy = bot - top;
    (value, dx, dy)
}

/// Scatter an output gradient back to the four source pixels.
pub(crate) fn scatter_plane<S: Scalar>(
    grad_plane: &mut [S],
    h: usize,
    w: usize,
    x: f64,
    y: f64,
    g: S,
) {
    let c = corners(x, y);
    let fx = S::from_f64(c.fx);
    let fy = S::from_f64(c.fy);
    let one = S::ONE;
    let mut put = |xx: isize, yy: isize, weight: S| {
        if xx >= 0 && yy >= 0 && xx < w as isize && yy < h as isize {
            grad_plane[yy as usize * w + xx as usize] += g * weight;
        }
    };
    put(c.x0, c.y0, (one - fx) * (one - fy));
    put(c.x0 + 1, c.y0, fx * (one - fy));
    put(c.x0, c.y0 + 1, (one - fx) * fy);
    put(c.x0 + 1, c.y0 + 1, fx * fy);
}

/// Graph op: sample every channel of a (C,H,W) map at one fractional point.
///
/// `coords` is a length-2 tensor [x, y]; the result is differentiable with
/// respect to both the map values and the coordinates.
pub fn bilinear_sample<S: Scalar>(
    g: &mut Graph<S>,
    map: TensorId,
    coords: TensorId,
) -> Result<TensorId> {
    let shape = g.value(map).shape();
    if shape.len() != 3 {
        return Err(invalid!("bilinear_sample map must be (C,H,W), got {shape:?}"));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if g.value(coords).shape() != [2] {
        return Err(invalid!(
            "bilinear_sample coords must have shape [2], got {:?}",
            g.value(coords).shape()
        ));
    }
    let x = g.value(coords).data()[0].to_f64();
    let y = g.value(coords).data()[1].to_f64();
    let data = g.value(map).data();
    let out: Vec<S> = (0..c)
        .map(|ci| sample_plane(&data[ci * h * w..][..h * w], h, w, x, y))
        .collect();
    Ok(g.push_op(
        Tensor::new(vec![c], out).expect("length c"),
        &[map, coords],
        Box::new(move |ctx| {
            let x = ctx.value(coords).data()[0].to_f64();
            let y = ctx.value(coords).data()[1].to_f64();
            if ctx.needs(map) {
                let gout = ctx.out_grad().to_vec();
                if let Some(grad) = ctx.grad_mut(map) {
                    for (ci, &gc) in gout.iter().enumerate() {
                        scatter_plane(&mut grad[ci * h * w..(ci + 1) * h * w], h, w, x, y, gc);
                    }
                }
            }
            if ctx.needs(coords) {
                let mut dx = S::ZERO;
                let mut dy = S::ZERO;
                {
                    let data = ctx.value(map).data();
                    for (ci, &gc) in ctx.out_grad().iter().enumerate() {
                        let (_, gx, gy) =
                            sample_plane_with_grads(&data[ci * h * w..][..h * w], h, w, x, y);
                        dx += gc * gx;
                        dy += gc * gy;
                    }
                }
                ctx.accumulate(coords, &[dx, dy]);
            }
        }),
    ))
}
