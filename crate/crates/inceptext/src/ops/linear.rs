//! Fully connected layer on 1-D vectors (used by the ROI offset heads).

use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, TensorId};
use crate::tensor::{Scalar, Tensor};

/// y = W x + b for a 1-D input x of length `in_dim`, W of shape
/// (out_dim, in_dim), optional bias of length `out_dim`.
pub fn linear<S: Scalar>(
    g: &mut Graph<S>,
    x: TensorId,
    weight: TensorId,
    bias: Option<TensorId>,
) -> Result<TensorId> {
    let xshape = g.value(x).shape();
    if xshape.len() != 1 {
        return Err(invalid!("linear input must be 1-D, got {xshape:?}"));
    }
    let in_dim = xshape[0];
    let wshape = g.value(weight).shape();
    if wshape.len() != 2 || wshape[1] != in_dim {
        return Err(Error::ShapeMismatch {
            context: "linear weight",
            left: wshape.to_vec(),
            right: vec![wshape.first().copied().unwrap_or(0), in_dim],
        });
    }
    let out_dim = wshape[0];
    if let Some(b) = bias {
        if g.value(b).shape() != [out_dim] {
            return Err(Error::ShapeMismatch {
                context: "linear bias",
                left: g.value(b).shape().to_vec(),
                right: vec![out_dim],
            });
        }
    }
    let xv = g.value(x).data();
    let wv = g.value(weight).data();
    let mut out = vec![S::ZERO; out_dim];
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &wv[o * in_dim..][..in_dim];
        let mut acc = S::ZERO;
        for (&w, &xi) in row.iter().zip(xv) {
            acc += w * xi;
        }
        *slot = acc;
    }
    if let Some(b) = bias {
        for (slot, &bv) in out.iter_mut().zip(g.value(b).data()) {
            *slot += bv;
        }
    }
    let mut tracked = vec![x, weight];
    if let Some(b) = bias {
        tracked.push(b);
    }
    Ok(g.push_op(
        Tensor::new(vec![out_dim], out).expect("linear shape"),
        &tracked,
        Box::new(move |ctx| {
            if ctx.needs(x) {
                let mut dx = vec![S::ZERO; in_dim];
                {
                    let wv = ctx.value(weight).data();
                    for (o, &go) in ctx.out_grad().iter().enumerate() {
                        let row = &wv[o * in_dim..][..in_dim];
                        for (d, &w) in dx.iter_mut().zip(row) {
                            *d += go * w;
                        }
                    }
                }
                ctx.accumulate(x, &dx);
            }
            if ctx.needs(weight) {
                let mut dw = vec![S::ZERO; out_dim * in_dim];
                {
                    let xv = ctx.value(x).data();
                    for (o, &go) in ctx.out_grad().iter().enumerate() {
                        let row = &mut dw[o * in_dim..(o + 1) * in_dim];
                        for (d, &xi) in row.iter_mut().zip(xv) {
                            *d += go * xi;
                        }
                    }
                }
                ctx.accumulate(weight, &dw);
            }
            if let Some(b) = bias {
                if ctx.needs(b) {
                    let db = ctx.out_grad().to_vec();
                    ctx.accumulate(b, &db);
                }
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum_all;

    #[test]
    fn matvec_plus_bias() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let w = g.constant(Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap());
        let b = g.constant(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let y = linear(&mut g, x, w, Some(b)).unwrap();
        let out = g.value(y).data();
        assert!((out[0] - 1.1).abs() < 1e-6);
        assert!((out[1] - 2.2).abs() < 1e-6);
        assert!((out[2] - 3.3).abs() < 1e-6);
    }

    #[test]
    fn gradient_shapes_and_values() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.input(Tensor::new(vec![2], vec![3.0, -1.0]).unwrap(), true);
        let w = g.input(Tensor::new(vec![1, 2], vec![2.0, 5.0]).unwrap(), true);
        let y = linear(&mut g, x, w, None).unwrap();
        let s = sum_all(&mut g, y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 5.0]);
        assert_eq!(g.grad(w).unwrap().data(), &[3.0, -1.0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(Tensor::<f32>::zeros(vec![3]));
        let w = g.constant(Tensor::<f32>::zeros(vec![2, 4]));
        assert!(linear(&mut g, x, w, None).is_err());
    }
}
