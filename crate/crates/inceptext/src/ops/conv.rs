//! 2-D convolution (cross-correlation) with stride, zero padding and
//! dilation, plus the factorized 1xN / Nx1 composition.

// indexed loops keep the strided input/output coordinate math explicit
#![allow(clippy::needless_range_loop)]

use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, TensorId};
use crate::parallel::par_chunks_mut;
use crate::tensor::{Scalar, Tensor};

/// Geometry of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn square(k: usize, stride: usize, pad: usize, inc: usize, outc: usize) -> Self {
        ConvSpec {
            kernel_h: k,
            kernel_w: k,
            stride,
            pad,
            dilation: 1,
            in_channels: inc,
            out_channels: outc,
        }
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    fn out_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.pad;
        if padded < span {
            return Err(invalid!(
                "conv output would be empty: input {input}, pad {}, kernel span {span}",
                self.pad
            ));
        }
        Ok((padded - span) / self.stride + 1)
    }

    /// (out_h, out_w) for an (h, w) input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            self.out_extent(h, self.kernel_h)?,
            self.out_extent(w, self.kernel_w)?,
        ))
    }

    fn validate(&self) -> Result<()> {
        if self.kernel_h == 0
            || self.kernel_w == 0
            || self.stride == 0
            || self.dilation == 0
            || self.in_channels == 0
            || self.out_channels == 0
        {
            return Err(invalid!("conv spec fields must be positive: {self:?}"));
        }
        Ok(())
    }
}

struct Geometry {
    n: usize,
    ic: usize,
    h: usize,
    w: usize,
    oc: usize,
    oh: usize,
    ow: usize,
}

fn resolve_geometry<S: Scalar>(
    g: &Graph<S>,
    input: TensorId,
    weight: TensorId,
    bias: Option<TensorId>,
    spec: &ConvSpec,
) -> Result<Geometry> {
    spec.validate()?;
    let ishape = g.value(input).shape();
    if ishape.len() != 4 {
        return Err(invalid!("conv2d input must be (N,C,H,W), got {ishape:?}"));
    }
    let (n, ic, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    if ic != spec.in_channels {
        return Err(Error::ShapeMismatch {
            context: "conv2d input channels",
            left: vec![ic],
            right: vec![spec.in_channels],
        });
    }
    let wshape = g.value(weight).shape();
    let expected = vec![spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w];
    if wshape != expected.as_slice() {
        return Err(Error::ShapeMismatch {
            context: "conv2d weight",
            left: wshape.to_vec(),
            right: expected,
        });
    }
    if let Some(b) = bias {
        let bshape = g.value(b).shape();
        if bshape != [spec.out_channels] {
            return Err(Error::ShapeMismatch {
                context: "conv2d bias",
                left: bshape.to_vec(),
                right: vec![spec.out_channels],
            });
        }
    }
    let (oh, ow) = spec.output_size(h, w)?;
    Ok(Geometry { n, ic, h, w, oc: spec.out_channels, oh, ow })
}

/// Valid output range [lo, hi) so that `o*stride + k*dilation - pad` stays
/// inside [0, limit).
fn valid_range(k: usize, spec: &ConvSpec, limit: usize, out: usize) -> (usize, usize) {
    let off = k as isize * spec.dilation as isize - spec.pad as isize;
    let s = spec.stride as isize;
    let lo = if off < 0 { ((-off) + s - 1) / s } else { 0 };
    let hi_in = limit as isize - 1 - off;
    if hi_in < 0 {
        return (0, 0);
    }
    let hi = (hi_in / s + 1).min(out as isize);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

fn conv_forward<S: Scalar>(
    input: &[S],
    weight: &[S],
    bias: Option<&[S]>,
    spec: &ConvSpec,
    geo: &Geometry,
) -> Vec<S> {
    let (ih, iw, oh, ow) = (geo.h, geo.w, geo.oh, geo.ow);
    let plane = oh * ow;
    let mut out = vec![S::ZERO; geo.n * geo.oc * plane];
    par_chunks_mut(&mut out, plane, |chunk_idx, out_plane| {
        let n = chunk_idx / geo.oc;
        let oc = chunk_idx % geo.oc;
        if let Some(b) = bias {
            let bv = b[oc];
            for v in out_plane.iter_mut() {
                *v = bv;
            }
        }
        for ic in 0..geo.ic {
            let in_plane = &input[(n * geo.ic + ic) * ih * iw..][..ih * iw];
            let wbase = (oc * geo.ic + ic) * spec.kernel_h * spec.kernel_w;
            for ky in 0..spec.kernel_h {
                let (oy_lo, oy_hi) = valid_range(ky, spec, ih, oh);
                for kx in 0..spec.kernel_w {
                    let wv = weight[wbase + ky * spec.kernel_w + kx];
                    let (ox_lo, ox_hi) = valid_range(kx, spec, iw, ow);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let x_off = kx as isize * spec.dilation as isize - spec.pad as isize;
                    let y_off = ky as isize * spec.dilation as isize - spec.pad as isize;
                    for oy in oy_lo..oy_hi {
                        let iy = (oy * spec.stride) as isize + y_off;
                        let in_row = &in_plane[iy as usize * iw..][..iw];
                        let out_row = &mut out_plane[oy * ow..][..ow];
                        if spec.stride == 1 {
                            let ix0 = (ox_lo as isize + x_off) as usize;
                            let len = ox_hi - ox_lo;
                            for (o, &i) in out_row[ox_lo..ox_hi].iter_mut().zip(&in_row[ix0..ix0 + len]) {
                                *o += wv * i;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ((ox * spec.stride) as isize + x_off) as usize;
                                out_row[ox] += wv * in_row[ix];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn conv_input_grad<S: Scalar>(
    gout: &[S],
    weight: &[S],
    spec: &ConvSpec,
    geo: &Geometry,
) -> Vec<S> {
    let (ih, iw, oh, ow) = (geo.h, geo.w, geo.oh, geo.ow);
    let plane = ih * iw;
    let mut din = vec![S::ZERO; geo.n * geo.ic * plane];
    par_chunks_mut(&mut din, plane, |chunk_idx, din_plane| {
        let n = chunk_idx / geo.ic;
        let ic = chunk_idx % geo.ic;
        for oc in 0..geo.oc {
            let g_plane = &gout[(n * geo.oc + oc) * oh * ow..][..oh * ow];
            let wbase = (oc * geo.ic + ic) * spec.kernel_h * spec.kernel_w;
            for ky in 0..spec.kernel_h {
                let (oy_lo, oy_hi) = valid_range(ky, spec, ih, oh);
                let y_off = ky as isize * spec.dilation as isize - spec.pad as isize;
                for kx in 0..spec.kernel_w {
                    let wv = weight[wbase + ky * spec.kernel_w + kx];
                    let (ox_lo, ox_hi) = valid_range(kx, spec, iw, ow);
                    let x_off = kx as isize * spec.dilation as isize - spec.pad as isize;
                    for oy in oy_lo..oy_hi {
                        let iy = ((oy * spec.stride) as isize + y_off) as usize;
                        let din_row = &mut din_plane[iy * iw..][..iw];
                        let g_row = &g_plane[oy * ow..][..ow];
                        for ox in ox_lo..ox_hi {
                            let ix = ((ox * spec.stride) as isize + x_off) as usize;
                            din_row[ix] += wv * g_row[ox];
                        }
                    }
                }
            }
        }
    });
    din
}

fn conv_weight_grad<S: Scalar>(
    gout: &[S],
    input: &[S],
    spec: &ConvSpec,
    geo: &Geometry,
) -> Vec<S> {
    let (ih, iw, oh, ow) = (geo.h, geo.w, geo.oh, geo.ow);
    let per_oc = geo.ic * spec.kernel_h * spec.kernel_w;
    let mut dw = vec![S::ZERO; geo.oc * per_oc];
    par_chunks_mut(&mut dw, per_oc, |oc, dw_slice| {
        for n in 0..geo.n {
            let g_plane = &gout[(n * geo.oc + oc) * oh * ow..][..oh * ow];
            for ic in 0..geo.ic {
                let in_plane = &input[(n * geo.ic + ic) * ih * iw..][..ih * iw];
                for ky in 0..spec.kernel_h {
                    let (oy_lo, oy_hi) = valid_range(ky, spec, ih, oh);
                    let y_off = ky as isize * spec.dilation as isize - spec.pad as isize;
                    for kx in 0..spec.kernel_w {
                        let (ox_lo, ox_hi) = valid_range(kx, spec, iw, ow);
                        let x_off = kx as isize * spec.dilation as isize - spec.pad as isize;
                        let mut acc = S::ZERO;
                        for oy in oy_lo..oy_hi {
                            let iy = ((oy * spec.stride) as isize + y_off) as usize;
                            let in_row = &in_plane[iy * iw..][..iw];
                            let g_row = &g_plane[oy * ow..][..ow];
                            for ox in ox_lo..ox_hi {
                                let ix = ((ox * spec.stride) as isize + x_off) as usize;
                                acc += g_row[ox] * in_row[ix];
                            }
                        }
                        dw_slice[ic * spec.kernel_h * spec.kernel_w + ky * spec.kernel_w + kx] +=
                            acc;
                    }
                }
            }
        }
    });
    dw
}

/// Zero-padded cross-correlation, differentiable w.r.t. input, weight, bias.
pub fn conv2d<S: Scalar>(
    g: &mut Graph<S>,
    input: TensorId,
    weight: TensorId,
    bias: Option<TensorId>,
    spec: ConvSpec,
) -> Result<TensorId> {
    let geo = resolve_geometry(g, input, weight, bias, &spec)?;
    let out = conv_forward(
        g.value(input).data(),
        g.value(weight).data(),
        bias.map(|b| g.value(b).data()),
        &spec,
        &geo,
    );
    let out = Tensor::new(vec![geo.n, geo.oc, geo.oh, geo.ow], out).expect("conv shape");
    let mut tracked_inputs = vec![input, weight];
    if let Some(b) = bias {
        tracked_inputs.push(b);
    }
    Ok(g.push_op(
        out,
        &tracked_inputs,
        Box::new(move |ctx| {
            let geo = Geometry {
                n: ctx.value(input).dim(0),
                ic: ctx.value(input).dim(1),
                h: ctx.value(input).dim(2),
                w: ctx.value(input).dim(3),
                oc: spec.out_channels,
                oh: ctx.out_value().dim(2),
                ow: ctx.out_value().dim(3),
            };
            if ctx.needs(input) {
                let delta = conv_input_grad(ctx.out_grad(), ctx.value(weight).data(), &spec, &geo);
                ctx.accumulate(input, &delta);
            }
            if ctx.needs(weight) {
                let delta = conv_weight_grad(ctx.out_grad(), ctx.value(input).data(), &spec, &geo);
                ctx.accumulate(weight, &delta);
            }
            if let Some(b) = bias {
                if ctx.needs(b) {
                    let plane = geo.oh * geo.ow;
                    let gout = ctx.out_grad();
                    let mut db = vec![S::ZERO; geo.oc];
                    for n in 0..geo.n {
                        for (oc, slot) in db.iter_mut().enumerate() {
                            for &v in &gout[(n * geo.oc + oc) * plane..][..plane] {
                                *slot += v;
                            }
                        }
                    }
                    ctx.accumulate(b, &db);
                }
            }
        }),
    ))
}

/// Separable NxN convolution: a 1xN pass followed by an Nx1 pass, padded to
/// preserve spatial size. Same receptive field as the full NxN kernel at
/// 2NC^2 instead of N^2C^2 weights.
pub fn factorized_conv<S: Scalar>(
    g: &mut Graph<S>,
    input: TensorId,
    n: usize,
    row_weight: TensorId,
    col_weight: TensorId,
    bias: Option<TensorId>,
) -> Result<TensorId> {
    if n < 3 || n.is_multiple_of(2) {
        return Err(invalid!("factorized kernel size must be odd and >= 3, got {n}"));
    }
    let in_channels = g.value(input).dim(1);
    let mid_channels = g.value(row_weight).dim(0);
    let out_channels = g.value(col_weight).dim(0);
    let half = n / 2;

    // 1xN: pad columns only.
    let row_spec = ConvSpec {
        kernel_h: 1,
        kernel_w: n,
        stride: 1,
        pad: 0,
        dilation: 1,
        in_channels,
        out_channels: mid_channels,
    };
    let rshape = g.value(row_weight).shape();
    if rshape != [mid_channels, in_channels, 1, n] {
        return Err(Error::ShapeMismatch {
            context: "factorized_conv row weight",
            left: rshape.to_vec(),
            right: vec![mid_channels, in_channels, 1, n],
        });
    }
    let padded = pad_spatial(g, input, 0, half)?;
    let mid = conv2d(g, padded, row_weight, None, row_spec)?;

    // Nx1: pad rows only.
    let col_spec = ConvSpec {
        kernel_h: n,
        kernel_w: 1,
        stride: 1,
        pad: 0,
        dilation: 1,
        in_channels: mid_channels,
        out_channels,
    };
    let cshape = g.value(col_weight).shape();
    if cshape != [out_channels, mid_channels, n, 1] {
        return Err(Error::ShapeMismatch {
            context: "factorized_conv col weight",
            left: cshape.to_vec(),
            right: vec![out_channels, mid_channels, n, 1],
        });
    }
    let padded = pad_spatial(g, mid, half, 0)?;
    conv2d(g, padded, col_weight, bias, col_spec)
}

/// Zero-pad the spatial dims of an (N,C,H,W) tensor by (pad_y, pad_x) on each
/// side.
pub(crate) fn pad_spatial<S: Scalar>(
    g: &mut Graph<S>,
    input: TensorId,
    pad_y: usize,
    pad_x: usize,
) -> Result<TensorId> {
    if pad_y == 0 && pad_x == 0 {
        return Ok(reuse(g, input));
    }
    let t = g.value(input);
    if t.shape().len() != 4 {
        return Err(invalid!("pad_spatial input must be rank 4, got {:?}", t.shape()));
    }
    let (n, c, h, w) = (t.dim(0), t.dim(1), t.dim(2), t.dim(3));
    let (nh, nw) = (h + 2 * pad_y, w + 2 * pad_x);
    let data = t.data();
    let mut out = vec![S::ZERO; n * c * nh * nw];
    for p in 0..n * c {
        for y in 0..h {
            let src = &data[(p * h + y) * w..][..w];
            let dst = &mut out[(p * nh + y + pad_y) * nw + pad_x..][..w];
            dst.copy_from_slice(src);
        }
    }
    let out = Tensor::new(vec![n, c, nh, nw], out).expect("pad shape");
    Ok(g.push_op(
        out,
        &[input],
        Box::new(move |ctx| {
            if ctx.needs(input) {
                let gout = ctx.out_grad();
                let mut delta = vec![S::ZERO; n * c * h * w];
                for p in 0..n * c {
                    for y in 0..h {
                        let src = &gout[(p * nh + y + pad_y) * nw + pad_x..][..w];
                        let dst = &mut delta[(p * h + y) * w..][..w];
                        dst.copy_from_slice(src);
                    }
                }
                ctx.accumulate(input, &delta);
            }
        }),
    ))
}

/// Identity node (used when a pad of zero is requested).
fn reuse<S: Scalar>(g: &mut Graph<S>, input: TensorId) -> TensorId {
    let out = g.value(input).clone();
    g.push_op(
        out,
        &[input],
        Box::new(move |ctx| {
            let grad = ctx.out_grad().to_vec();
            ctx.accumulate(input, &grad);
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(shape: Vec<usize>) -> Tensor<f32> {
        Tensor::full(shape, 1.0)
    }

    #[test]
    fn ones_kernel_sums_window() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(ones(vec![1, 1, 3, 3]));
        let w = g.constant(ones(vec![1, 1, 3, 3]));
        let y = conv2d(&mut g, x, w, None, ConvSpec::square(3, 1, 0, 1, 1)).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);
    }

    #[test]
    fn dilated_center_impulse_reads_center_weight() {
        let mut g: Graph<f32> = Graph::new();
        let mut img = Tensor::<f32>::zeros(vec![1, 1, 5, 5]);
        img.data_mut()[2 * 5 + 2] = 1.0;
        let x = g.constant(img);
        let w = g.constant(Tensor::from_fn(vec![1, 1, 3, 3], |i| i as f32 + 1.0));
        let spec = ConvSpec::square(3, 1, 0, 1, 1).with_dilation(2);
        let y = conv2d(&mut g, x, w, None, spec).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        // center tap (ky=1, kx=1) has weight 5.0
        assert_eq!(g.value(y).data(), &[5.0]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(ones(vec![1, 2, 4, 4]));
        let w = g.constant(ones(vec![1, 1, 3, 3]));
        assert!(conv2d(&mut g, x, w, None, ConvSpec::square(3, 1, 0, 1, 1)).is_err());
    }

    #[test]
    fn empty_output_is_rejected() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(ones(vec![1, 1, 2, 2]));
        let w = g.constant(ones(vec![1, 1, 3, 3]));
        assert!(conv2d(&mut g, x, w, None, ConvSpec::square(3, 1, 0, 1, 1)).is_err());
    }

    #[test]
    fn stride_two_shape() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(ones(vec![1, 1, 8, 8]));
        let w = g.constant(ones(vec![2, 1, 3, 3]));
        let y = conv2d(&mut g, x, w, None, ConvSpec::square(3, 2, 1, 1, 2)).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, 4, 4]);
    }

    #[test]
    fn bias_offsets_every_output() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 1, 4, 4]));
        let w = g.constant(ones(vec![1, 1, 3, 3]));
        let b = g.constant(Tensor::new(vec![1], vec![0.5]).unwrap());
        let y = conv2d(&mut g, x, w, Some(b), ConvSpec::square(3, 1, 1, 1, 1)).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn factorized_ones_interior_is_nine() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(ones(vec![1, 1, 7, 7]));
        let wr = g.constant(ones(vec![1, 1, 1, 3]));
        let wc = g.constant(ones(vec![1, 1, 3, 1]));
        let y = factorized_conv(&mut g, x, 3, wr, wc, None).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 7, 7]);
        // interior pixel sees a full 3x3 window of ones
        assert_eq!(g.value(y).at4(0, 0, 3, 3), 9.0);
        // corner only sees the 2x2 in-bounds part
        assert_eq!(g.value(y).at4(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn factorized_rejects_even_n() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(ones(vec![1, 1, 7, 7]));
        let wr = g.constant(ones(vec![1, 1, 1, 4]));
        let wc = g.constant(ones(vec![1, 1, 4, 1]));
        assert!(factorized_conv(&mut g, x, 4, wr, wc, None).is_err());
    }

    #[test]
    fn impulse_footprint_is_n_by_n() {
        // impulse input -> nonzero support of the output is an n x n window
        let n = 5;
        let mut g: Graph<f32> = Graph::new();
        let mut img = Tensor::<f32>::zeros(vec![1, 1, 11, 11]);
        img.data_mut()[5 * 11 + 5] = 1.0;
        let x = g.constant(img);
        let wr = g.constant(ones(vec![1, 1, 1, n]));
        let wc = g.constant(ones(vec![1, 1, n, 1]));
        let y = factorized_conv(&mut g, x, n, wr, wc, None).unwrap();
        let out = g.value(y);
        let mut support = Vec::new();
        for yy in 0..11 {
            for xx in 0..11 {
                if out.at4(0, 0, yy, xx) != 0.0 {
                    support.push((yy, xx));
                }
            }
        }
        let ys: Vec<usize> = support.iter().map(|p| p.0).collect();
        let xs: Vec<usize> = support.iter().map(|p| p.1).collect();
        assert_eq!(ys.iter().max().unwrap() - ys.iter().min().unwrap() + 1, n);
        assert_eq!(xs.iter().max().unwrap() - xs.iter().min().unwrap() + 1, n);
        assert_eq!(support.len(), n * n);
    }
}
