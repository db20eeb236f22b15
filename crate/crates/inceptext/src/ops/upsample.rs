//! Factor-2 spatial upsampling.

use crate::error::{invalid, Result};
use crate::graph::{Graph, TensorId};
use crate::parallel::par_chunks_mut;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    /// Corner-aligned: output corners sample exactly the input corner pixels.
    Bilinear,
}

/// Source coordinate for output index `o` when scaling `n` -> `2n`,
/// corner-aligned.
fn src_coord(o: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        o as f64 * (n - 1) as f64 / (2 * n - 1) as f64
    }
}

pub fn upsample2x<S: Scalar>(
    g: &mut Graph<S>,
    input: TensorId,
    mode: UpsampleMode,
) -> Result<TensorId> {
    let shape = g.value(input).shape();
    if shape.len() != 4 {
        return Err(invalid!("upsample2x input must be (N,C,H,W), got {shape:?}"));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (oh, ow) = (2 * h, 2 * w);
    let data = g.value(input).data();
    let mut out = vec![S::ZERO; n * c * oh * ow];
    par_chunks_mut(&mut out, oh * ow, |p, out_plane| {
        let in_plane = &data[p * h * w..][..h * w];
        match mode {
            UpsampleMode::Nearest => {
                for oy in 0..oh {
                    let iy = oy / 2;
                    for ox in 0..ow {
                        out_plane[oy * ow + ox] = in_plane[iy * w + ox / 2];
                    }
                }
            }
            UpsampleMode::Bilinear => {
                for oy in 0..oh {
                    let sy = src_coord(oy, h);
                    let y0 = sy.floor() as usize;
                    let y1 = (y0 + 1).min(h - 1);
                    let fy = S::from_f64(sy - y0 as f64);
                    for ox in 0..ow {
                        let sx = src_coord(ox, w);
                        let x0 = sx.floor() as usize;
                        let x1 = (x0 + 1).min(w - 1);
                        let fx = S::from_f64(sx - x0 as f64);
                        let one = S::ONE;
                        let top = in_plane[y0 * w + x0] * (one - fx) + in_plane[y0 * w + x1] * fx;
                        let bot = in_plane[y1 * w + x0] * (one - fx) + in_plane[y1 * w + x1] * fx;
                        out_plane[oy * ow + ox] = top * (one - fy) + bot * fy;
                    }
                }
            }
        }
    });
    let out = Tensor::new(vec![n, c, oh, ow], out).expect("upsample shape");
    Ok(g.push_op(
        out,
        &[input],
        Box::new(move |ctx| {
            if !ctx.needs(input) {
                return;
            }
            let mut delta = vec![S::ZERO; n * c * h * w];
            {
                let gout = ctx.out_grad();
                par_chunks_mut(&mut delta, h * w, |p, din_plane| {
                    let g_plane = &gout[p * oh * ow..][..oh * ow];
                    match mode {
                        UpsampleMode::Nearest => {
                            for oy in 0..oh {
                                let iy = oy / 2;
                                for ox in 0..ow {
                                    din_plane[iy * w + ox / 2] += g_plane[oy * ow + ox];
                                }
                            }
                        }
                        UpsampleMode::Bilinear => {
                            for oy in 0..oh {
                                let sy = src_coord(oy, h);
                                let y0 = sy.floor() as usize;
                                let y1 = (y0 + 1).min(h - 1);
                                let fy = S::from_f64(sy - y0 as f64);
                                for ox in 0..ow {
                                    let sx = src_coord(ox, w);
                                    let x0 = sx.floor() as usize;
                                    let x1 = (x0 + 1).min(w - 1);
                                    let fx = S::from_f64(sx - x0 as f64);
                                    let one = S::ONE;
                                    let gv = g_plane[oy * ow + ox];
                                    din_plane[y0 * w + x0] += gv * (one - fx) * (one - fy);
                                    din_plane[y0 * w + x1] += gv * fx * (one - fy);
                                    din_plane[y1 * w + x0] += gv * (one - fx) * fy;
                                    din_plane[y1 * w + x1] += gv * fx * fy;
                                }
                            }
                        }
                    }
                });
            }
            ctx.accumulate(input, &delta);
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_replicates_pixels() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = upsample2x(&mut g, x, UpsampleMode::Nearest).unwrap();
        let expect = [
            1.0, 1.0, 2.0, 2.0, //
            1.0, 1.0, 2.0, 2.0, //
            3.0, 3.0, 4.0, 4.0, //
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(g.value(y).data(), &expect);
    }

    #[test]
    fn constant_input_stays_constant_in_both_modes() {
        for mode in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
            let mut g: Graph<f32> = Graph::new();
            let x = g.constant(Tensor::full(vec![1, 2, 3, 5], 0.7));
            let y = upsample2x(&mut g, x, mode).unwrap();
            assert_eq!(g.value(y).shape(), &[1, 2, 6, 10]);
            assert!(g.value(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
        }
    }

    #[test]
    fn bilinear_aligns_corners() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = upsample2x(&mut g, x, UpsampleMode::Bilinear).unwrap();
        let out = g.value(y);
        assert_eq!(out.at4(0, 0, 0, 0), 1.0);
        assert_eq!(out.at4(0, 0, 0, 3), 2.0);
        assert_eq!(out.at4(0, 0, 3, 0), 3.0);
        assert_eq!(out.at4(0, 0, 3, 3), 4.0);
    }
}
