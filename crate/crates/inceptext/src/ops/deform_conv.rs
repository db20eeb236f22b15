//! Deformable 2-D convolution: every kernel tap samples at its regular grid
//! position plus a learned per-location (dx, dy), via bilinear interpolation.
//!
//! Offset layout: channel 2t holds dx and channel 2t+1 holds dy for tap
//! t = ky*kernel_w + kx, one value per output location.

use super::bilinear::{sample_plane, sample_plane_with_grads, scatter_plane};
use super::conv::ConvSpec;
use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, TensorId};
use crate::parallel::par_chunks_mut;
use crate::tensor::{Scalar, Tensor};

struct DeformGeo {
    ic: usize,
    h: usize,
    w: usize,
    oc: usize,
    oh: usize,
    ow: usize,
    taps: usize,
}

fn tap_position<S: Scalar>(
    spec: &ConvSpec,
    offsets: &[S],
    geo: &DeformGeo,
    t: usize,
    oy: usize,
    ox: usize,
) -> (f64, f64) {
    let ky = t / spec.kernel_w;
    let kx = t % spec.kernel_w;
    let plane = geo.oh * geo.ow;
    let pos = oy * geo.ow + ox;
    let dx = offsets[(2 * t) * plane + pos].to_f64();
    let dy = offsets[(2 * t + 1) * plane + pos].to_f64();
    let base_x = (ox * spec.stride + kx * spec.dilation) as f64 - spec.pad as f64;
    let base_y = (oy * spec.stride + ky * spec.dilation) as f64 - spec.pad as f64;
    (base_x + dx, base_y + dy)
}

/// Sampled patches: rows indexed by (ic, tap), columns by output position.
fn build_columns<S: Scalar>(
    input: &[S],
    offsets: &[S],
    spec: &ConvSpec,
    geo: &DeformGeo,
    n: usize,
) -> Vec<S> {
    let plane = geo.oh * geo.ow;
    let mut cols = vec![S::ZERO; geo.ic * geo.taps * plane];
    let input_n = &input[n * geo.ic * geo.h * geo.w..][..geo.ic * geo.h * geo.w];
    let offsets_n = &offsets[n * 2 * geo.taps * plane..][..2 * geo.taps * plane];
    par_chunks_mut(&mut cols, plane, |row, out_row| {
        let ic = row / geo.taps;
        let t = row % geo.taps;
        let in_plane = &input_n[ic * geo.h * geo.w..][..geo.h * geo.w];
        for oy in 0..geo.oh {
            for ox in 0..geo.ow {
                let (px, py) = tap_position(spec, offsets_n, geo, t, oy, ox);
                out_row[oy * geo.ow + ox] = sample_plane(in_plane, geo.h, geo.w, px, py);
            }
        }
    });
    cols
}

pub fn deformable_conv2d<S: Scalar>(
    g: &mut Graph<S>,
    input: TensorId,
    offsets: TensorId,
    weight: TensorId,
    bias: Option<TensorId>,
    spec: ConvSpec,
) -> Result<TensorId> {
    let ishape = g.value(input).shape();
    if ishape.len() != 4 {
        return Err(invalid!("deformable_conv2d input must be (N,C,H,W), got {ishape:?}"));
    }
    let (n, ic, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    if ic != spec.in_channels {
        return Err(Error::ShapeMismatch {
            context: "deformable_conv2d input channels",
            left: vec![ic],
            right: vec![spec.in_channels],
        });
    }
    let (oh, ow) = spec.output_size(h, w)?;
    let taps = spec.kernel_h * spec.kernel_w;
    let expected_off = vec![n, 2 * taps, oh, ow];
    if g.value(offsets).shape() != expected_off.as_slice() {
        return Err(Error::ShapeMismatch {
            context: "deformable_conv2d offsets",
            left: g.value(offsets).shape().to_vec(),
            right: expected_off,
        });
    }
    let wshape = g.value(weight).shape();
    let expected_w = vec![spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w];
    if wshape != expected_w.as_slice() {
        return Err(Error::ShapeMismatch {
            context: "deformable_conv2d weight",
            left: wshape.to_vec(),
            right: expected_w,
        });
    }
    let geo = DeformGeo { ic, h, w, oc: spec.out_channels, oh, ow, taps };
    let plane = oh * ow;
    let rows = ic * taps;

    let mut out = vec![S::ZERO; n * geo.oc * plane];
    let mut saved_cols: Vec<Vec<S>> = Vec::with_capacity(n);
    {
        let input_data = g.value(input).data();
        let offset_data = g.value(offsets).data();
        let weight_data = g.value(weight).data();
        let bias_data = bias.map(|b| g.value(b).data());
        for ni in 0..n {
            let cols = build_columns(input_data, offset_data, &spec, &geo, ni);
            let out_n = &mut out[ni * geo.oc * plane..][..geo.oc * plane];
            par_chunks_mut(out_n, plane, |oc, out_plane| {
                if let Some(b) = bias_data {
                    let bv = b[oc];
                    for v in out_plane.iter_mut() {
                        *v = bv;
                    }
                }
                let wrow = &weight_data[oc * rows..][..rows];
                for (r, &wv) in wrow.iter().enumerate() {
                    let col_row = &cols[r * plane..][..plane];
                    for (o, &cv) in out_plane.iter_mut().zip(col_row) {
                        *o += wv * cv;
                    }
                }
            });
            saved_cols.push(cols);
        }
    }

    let out = Tensor::new(vec![n, geo.oc, oh, ow], out).expect("deform conv shape");
    let mut tracked = vec![input, offsets, weight];
    if let Some(b) = bias {
        tracked.push(b);
    }
    Ok(g.push_op(
        out,
        &tracked,
        Box::new(move |ctx| {
            let geo = DeformGeo { ic, h, w, oc: spec.out_channels, oh, ow, taps };
            for ni in 0..n {
                let cols = &saved_cols[ni];

                // d(weight): one row per output channel.
                if ctx.needs(weight) {
                    let mut dw = vec![S::ZERO; geo.oc * rows];
                    {
                        let gout = &ctx.out_grad()[ni * geo.oc * plane..][..geo.oc * plane];
                        par_chunks_mut(&mut dw, rows, |oc, dw_row| {
                            let g_plane = &gout[oc * plane..][..plane];
                            for (r, slot) in dw_row.iter_mut().enumerate() {
                                let col_row = &cols[r * plane..][..plane];
                                let mut acc = S::ZERO;
                                for (&gv, &cv) in g_plane.iter().zip(col_row) {
                                    acc += gv * cv;
                                }
                                *slot += acc;
                            }
                        });
                    }
                    ctx.accumulate(weight, &dw);
                }

                if let Some(b) = bias {
                    if ctx.needs(b) {
                        let gout = &ctx.out_grad()[ni * geo.oc * plane..][..geo.oc * plane];
                        let mut db = vec![S::ZERO; geo.oc];
                        for (oc, slot) in db.iter_mut().enumerate() {
                            for &v in &gout[oc * plane..][..plane] {
                                *slot += v;
                            }
                        }
                        ctx.accumulate(b, &db);
                    }
                }

                if !ctx.needs(input) && !ctx.needs(offsets) {
                    continue;
                }

                // d(columns) = W^T @ d(out), one row per (ic, tap).
                let mut dcols = vec![S::ZERO; rows * plane];
                {
                    let gout = &ctx.out_grad()[ni * geo.oc * plane..][..geo.oc * plane];
                    let weight_data = ctx.value(weight).data();
                    par_chunks_mut(&mut dcols, plane, |r, dcol_row| {
                        for oc in 0..geo.oc {
                            let wv = weight_data[oc * rows + r];
                            let g_plane = &gout[oc * plane..][..plane];
                            for (d, &gv) in dcol_row.iter_mut().zip(g_plane) {
                                *d += wv * gv;
                            }
                        }
                    });
                }

                if ctx.needs(input) {
                    let mut din = vec![S::ZERO; ic * h * w];
                    {
                        let offsets_n =
                            &ctx.value(offsets).data()[ni * 2 * taps * plane..][..2 * taps * plane];
                        par_chunks_mut(&mut din, h * w, |ici, din_plane| {
                            for t in 0..taps {
                                let dcol_row = &dcols[(ici * taps + t) * plane..][..plane];
                                for oy in 0..oh {
                                    for ox in 0..ow {
                                        let gv = dcol_row[oy * ow + ox];
                                        let (px, py) =
                                            tap_position(&spec, offsets_n, &geo, t, oy, ox);
                                        scatter_plane(din_plane, h, w, px, py, gv);
                                    }
                                }
                            }
                        });
                    }
                    let mut full = vec![S::ZERO; n * ic * h * w];
                    full[ni * ic * h * w..(ni + 1) * ic * h * w].copy_from_slice(&din);
                    ctx.accumulate(input, &full);
                }

                if ctx.needs(offsets) {
                    let mut doff = vec![S::ZERO; 2 * taps * plane];
                    {
                        let offsets_n =
                            &ctx.value(offsets).data()[ni * 2 * taps * plane..][..2 * taps * plane];
                        let input_n = &ctx.value(input).data()[ni * ic * h * w..][..ic * h * w];
                        par_chunks_mut(&mut doff, 2 * plane, |t, doff_tap| {
                            let (dx_plane, dy_plane) = doff_tap.split_at_mut(plane);
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let pos = oy * ow + ox;
                                    let (px, py) = tap_position(&spec, offsets_n, &geo, t, oy, ox);
                                    let mut ax = S::ZERO;
                                    let mut ay = S::ZERO;
                                    for ici in 0..ic {
                                        let gv = dcols[(ici * taps + t) * plane + pos];
                                        if gv == S::ZERO {
                                            continue;
                                        }
                                        let in_plane = &input_n[ici * h * w..][..h * w];
                                        let (_, gx, gy) =
                                            sample_plane_with_grads(in_plane, h, w, px, py);
                                        ax += gv * gx;
                                        ay += gv * gy;
                                    }
                                    dx_plane[pos] += ax;
                                    dy_plane[pos] += ay;
                                }
                            }
                        });
                    }
                    let mut full = vec![S::ZERO; n * 2 * taps * plane];
                    full[ni * 2 * taps * plane..(ni + 1) * 2 * taps * plane]
                        .copy_from_slice(&doff);
                    ctx.accumulate(offsets, &full);
                }
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::super::conv::conv2d;
    use super::*;
    use crate::rng::DetRng;
    use crate::tensor::random_uniform;

    #[test]
    fn zero_offsets_match_regular_conv() {
        let mut rng = DetRng::new(42);
        let mut g: Graph<f32> = Graph::new();
        let spec = ConvSpec::square(3, 1, 1, 2, 3);
        let x = g.constant(random_uniform(&mut rng, vec![1, 2, 6, 6], -1.0, 1.0));
        let w = g.constant(random_uniform(&mut rng, vec![3, 2, 3, 3], -1.0, 1.0));
        let b = g.constant(random_uniform(&mut rng, vec![3], -1.0, 1.0));
        let zeros = g.constant(Tensor::zeros(vec![1, 18, 6, 6]));
        let y_def = deformable_conv2d(&mut g, x, zeros, w, Some(b), spec).unwrap();
        let y_reg = conv2d(&mut g, x, w, Some(b), spec).unwrap();
        let (a, bb) = (g.value(y_def).data(), g.value(y_reg).data());
        let max = a
            .iter()
            .zip(bb)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0f32, f32::max);
        assert!(max < 1e-6, "max diff {max}");
    }

    #[test]
    fn offset_shape_mismatch_is_rejected() {
        let mut g: Graph<f32> = Graph::new();
        let spec = ConvSpec::square(3, 1, 1, 1, 1);
        let x = g.constant(Tensor::zeros(vec![1, 1, 4, 4]));
        let w = g.constant(Tensor::zeros(vec![1, 1, 3, 3]));
        let bad = g.constant(Tensor::zeros(vec![1, 9, 4, 4]));
        assert!(deformable_conv2d(&mut g, x, bad, w, None, spec).is_err());
    }

    #[test]
    fn unit_x_offset_shifts_input_left() {
        let mut rng = DetRng::new(7);
        let mut g: Graph<f32> = Graph::new();
        let spec = ConvSpec::square(3, 1, 1, 1, 1);
        let mut img: Tensor<f32> = random_uniform(&mut rng, vec![1, 1, 5, 5], -1.0, 1.0);
        // zero the first column so "shift then pad" and "pad then shift"
        // agree at the left border
        for y in 0..5 {
            img.data_mut()[y * 5] = 0.0;
        }
        // shifted[y][x] = img[y][x+1], zero-filled on the right edge
        let mut shifted = Tensor::<f32>::zeros(vec![1, 1, 5, 5]);
        for y in 0..5 {
            for x in 0..4 {
                shifted.data_mut()[y * 5 + x] = img.data()[y * 5 + x + 1];
            }
        }
        let x_id = g.constant(img);
        let xs_id = g.constant(shifted);
        let w = g.constant(random_uniform(&mut rng, vec![1, 1, 3, 3], -1.0, 1.0));
        let mut off = Tensor::<f32>::zeros(vec![1, 18, 5, 5]);
        for t in 0..9 {
            for p in 0..25 {
                off.data_mut()[(2 * t) * 25 + p] = 1.0; // dx = +1 everywhere
            }
        }
        let off_id = g.constant(off);
        let y_def = deformable_conv2d(&mut g, x_id, off_id, w, None, spec).unwrap();
        let y_ref = conv2d(&mut g, xs_id, w, None, spec).unwrap();
        let max = g
            .value(y_def)
            .data()
            .iter()
            .zip(g.value(y_ref).data())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0f32, f32::max);
        assert!(max < 1e-6, "max diff {max}");
    }
}
