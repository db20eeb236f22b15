//! Pointwise and shape-plumbing operators.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::tensor::{Scalar, Tensor};

fn check_same_shape<S: Scalar>(
    context: &'static str,
    g: &Graph<S>,
    a: TensorId,
    b: TensorId,
) -> Result<()> {
    let (sa, sb) = (g.value(a).shape(), g.value(b).shape());
    if sa != sb {
        return Err(Error::ShapeMismatch {
            context,
            left: sa.to_vec(),
            right: sb.to_vec(),
        });
    }
    Ok(())
}

/// Elementwise sum of two equally shaped tensors.
pub fn add<S: Scalar>(g: &mut Graph<S>, a: TensorId, b: TensorId) -> Result<TensorId> {
    check_same_shape("add", g, a, b)?;
    let out = Tensor::new(
        g.value(a).shape().to_vec(),
        g.value(a)
            .data()
            .iter()
            .zip(g.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect(),
    )
    .expect("shape preserved");
    Ok(g.push_op(
        out,
        &[a, b],
        Box::new(move |ctx| {
            let grad = ctx.out_grad().to_vec();
            ctx.accumulate(a, &grad);
            ctx.accumulate(b, &grad);
        }),
    ))
}

/// Elementwise product of two equally shaped tensors.
pub fn mul<S: Scalar>(g: &mut Graph<S>, a: TensorId, b: TensorId) -> Result<TensorId> {
    check_same_shape("mul", g, a, b)?;
    let out = Tensor::new(
        g.value(a).shape().to_vec(),
        g.value(a)
            .data()
            .iter()
            .zip(g.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect(),
    )
    .expect("shape preserved");
    Ok(g.push_op(
        out,
        &[a, b],
        Box::new(move |ctx| {
            if ctx.needs(a) {
                let delta: Vec<S> = ctx
                    .out_grad()
                    .iter()
                    .zip(ctx.value(b).data())
                    .map(|(&go, &y)| go * y)
                    .collect();
                ctx.accumulate(a, &delta);
            }
            if ctx.needs(b) {
                let delta: Vec<S> = ctx
                    .out_grad()
                    .iter()
                    .zip(ctx.value(a).data())
                    .map(|(&go, &x)| go * x)
                    .collect();
                ctx.accumulate(b, &delta);
            }
        }),
    ))
}

pub fn relu<S: Scalar>(g: &mut Graph<S>, a: TensorId) -> TensorId {
    let out = Tensor::new(
        g.value(a).shape().to_vec(),
        g.value(a).data().iter().map(|&x| x.max(S::ZERO)).collect(),
    )
    .expect("shape preserved");
    g.push_op(
        out,
        &[a],
        Box::new(move |ctx| {
            if ctx.needs(a) {
                let delta: Vec<S> = ctx
                    .out_grad()
                    .iter()
                    .zip(ctx.value(a).data())
                    .map(|(&go, &x)| if x > S::ZERO { go } else { S::ZERO })
                    .collect();
                ctx.accumulate(a, &delta);
            }
        }),
    )
}

/// Multiply every element by a constant.
pub fn scale<S: Scalar>(g: &mut Graph<S>, a: TensorId, factor: f64) -> TensorId {
    let k = S::from_f64(factor);
    let out = Tensor::new(
        g.value(a).shape().to_vec(),
        g.value(a).data().iter().map(|&x| x * k).collect(),
    )
    .expect("shape preserved");
    g.push_op(
        out,
        &[a],
        Box::new(move |ctx| {
            if ctx.needs(a) {
                let delta: Vec<S> = ctx.out_grad().iter().map(|&go| go * k).collect();
                ctx.accumulate(a, &delta);
            }
        }),
    )
}

/// Sum of all elements, as a scalar node.
pub fn sum_all<S: Scalar>(g: &mut Graph<S>, a: TensorId) -> TensorId {
    let mut acc = S::ZERO;
    for &v in g.value(a).data() {
        acc += v;
    }
    g.push_op(
        Tensor::scalar(acc),
        &[a],
        Box::new(move |ctx| {
            let go = ctx.out_grad()[0];
            if let Some(grad) = ctx.grad_mut(a) {
                for v in grad.iter_mut() {
                    *v += go;
                }
            }
        }),
    )
}

/// Mean of all elements, as a scalar node.
pub fn mean_all<S: Scalar>(g: &mut Graph<S>, a: TensorId) -> TensorId {
    let n = g.value(a).numel();
    let inv = S::from_f64(1.0 / n as f64);
    let mut acc = S::ZERO;
    for &v in g.value(a).data() {
        acc += v;
    }
    g.push_op(
        Tensor::scalar(acc * inv),
        &[a],
        Box::new(move |ctx| {
            let go = ctx.out_grad()[0] * inv;
            if let Some(grad) = ctx.grad_mut(a) {
                for v in grad.iter_mut() {
                    *v += go;
                }
            }
        }),
    )
}

/// Collapse all trailing axes by summation: (d0, ...) -> (d0,).
pub fn sum_trailing<S: Scalar>(g: &mut Graph<S>, a: TensorId) -> TensorId {
    let shape = g.value(a).shape();
    let d0 = shape.first().copied().unwrap_or(1);
    let inner: usize = shape.iter().skip(1).product();
    let data = g.value(a).data();
    let mut out = vec![S::ZERO; d0];
    for (i, slot) in out.iter_mut().enumerate() {
        for &v in &data[i * inner..(i + 1) * inner] {
            *slot += v;
        }
    }
    g.push_op(
        Tensor::new(vec![d0], out).expect("length d0"),
        &[a],
        Box::new(move |ctx| {
            let go = ctx.out_grad().to_vec();
            if let Some(grad) = ctx.grad_mut(a) {
                for (i, &gi) in go.iter().enumerate() {
                    for v in grad[i * inner..(i + 1) * inner].iter_mut() {
                        *v += gi;
                    }
                }
            }
        }),
    )
}

/// View with a new shape; identity on data.
pub fn reshape<S: Scalar>(g: &mut Graph<S>, a: TensorId, shape: Vec<usize>) -> Result<TensorId> {
    let out = g.value(a).clone().reshaped(shape)?;
    Ok(g.push_op(
        out,
        &[a],
        Box::new(move |ctx| {
            let grad = ctx.out_grad().to_vec();
            ctx.accumulate(a, &grad);
        }),
    ))
}

/// Pick elements by flat index: out[i] = a[indices[i]]. Duplicate indices
/// accumulate their gradients.
pub fn gather<S: Scalar>(g: &mut Graph<S>, a: TensorId, indices: Vec<usize>) -> Result<TensorId> {
    let data = g.value(a).data();
    let mut out = Vec::with_capacity(indices.len());
    for &i in &indices {
        let v = *data.get(i).ok_or_else(|| {
            crate::error::invalid!("gather index {i} out of range for {} elements", data.len())
        })?;
        out.push(v);
    }
    let n = out.len();
    Ok(g.push_op(
        Tensor::new(vec![n], out).expect("length n"),
        &[a],
        Box::new(move |ctx| {
            let go = ctx.out_grad().to_vec();
            if let Some(grad) = ctx.grad_mut(a) {
                for (slot, &gi) in indices.iter().zip(&go) {
                    grad[*slot] += gi;
                }
            }
        }),
    ))
}

/// Concatenate (N,C_i,H,W) tensors along the channel axis.
pub fn concat_channels<S: Scalar>(g: &mut Graph<S>, parts: &[TensorId]) -> Result<TensorId> {
    if parts.is_empty() {
        return Err(crate::error::invalid!("concat_channels needs at least one part"));
    }
    let first = g.value(parts[0]).shape().to_vec();
    if first.len() != 4 {
        return Err(crate::error::invalid!(
            "concat_channels expects rank-4 tensors, got {first:?}"
        ));
    }
    let (n, h, w) = (first[0], first[2], first[3]);
    let mut channels = Vec::with_capacity(parts.len());
    for &p in parts {
        let s = g.value(p).shape();
        if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
            return Err(Error::ShapeMismatch {
                context: "concat_channels",
                left: first,
                right: s.to_vec(),
            });
        }
        channels.push(s[1]);
    }
    let c_total: usize = channels.iter().sum();
    let plane = h * w;
    let mut data = vec![S::ZERO; n * c_total * plane];
    let mut c_base = 0;
    for (&p, &c) in parts.iter().zip(&channels) {
        let src = g.value(p).data();
        for ni in 0..n {
            let dst = &mut data[(ni * c_total + c_base) * plane..][..c * plane];
            dst.copy_from_slice(&src[ni * c * plane..][..c * plane]);
        }
        c_base += c;
    }
    let out = Tensor::new(vec![n, c_total, h, w], data).expect("concat shape");
    let channels_bw = channels.clone();
    let parts_bw = parts.to_vec();
    Ok(g.push_op(
        out,
        parts,
        Box::new(move |ctx| {
            let mut c_base = 0;
            for (&p, &c) in parts_bw.iter().zip(&channels_bw) {
                if ctx.needs(p) {
                    let mut delta = vec![S::ZERO; n * c * plane];
                    {
                        let gout = ctx.out_grad();
                        for ni in 0..n {
                            let src = &gout[(ni * c_total + c_base) * plane..][..c * plane];
                            delta[ni * c * plane..(ni + 1) * c * plane].copy_from_slice(src);
                        }
                    }
                    ctx.accumulate(p, &delta);
                }
                c_base += c;
            }
        }),
    ))
}

/// Concatenate the flattened data of several nodes into one 1-D tensor.
pub fn concat_flat<S: Scalar>(g: &mut Graph<S>, parts: &[TensorId]) -> Result<TensorId> {
    if parts.is_empty() {
        return Err(crate::error::invalid!("concat_flat needs at least one part"));
    }
    let mut data = Vec::new();
    let mut spans = Vec::with_capacity(parts.len());
    for &p in parts {
        let d = g.value(p).data();
        spans.push((p, data.len(), d.len()));
        data.extend_from_slice(d);
    }
    let n = data.len();
    Ok(g.push_op(
        Tensor::new(vec![n], data).expect("length n"),
        parts,
        Box::new(move |ctx| {
            for &(p, start, len) in &spans {
                if ctx.needs(p) {
                    let delta = ctx.out_grad()[start..start + len].to_vec();
                    ctx.accumulate(p, &delta);
                }
            }
        }),
    ))
}
