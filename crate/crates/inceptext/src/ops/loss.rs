//! Loss primitives, mean-reduced to scalars.

use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, TensorId};
use crate::tensor::{Scalar, Tensor};

/// Softmax cross-entropy over rows of (N, C) logits against class indices.
pub fn softmax_cross_entropy<S: Scalar>(
    g: &mut Graph<S>,
    logits: TensorId,
    targets: &[usize],
) -> Result<TensorId> {
    let shape = g.value(logits).shape();
    if shape.len() != 2 {
        return Err(invalid!("softmax_cross_entropy logits must be (N,C), got {shape:?}"));
    }
    let (n, c) = (shape[0], shape[1]);
    if n == 0 || c == 0 {
        return Err(invalid!("softmax_cross_entropy needs at least one row and class"));
    }
    if targets.len() != n {
        return Err(Error::ShapeMismatch {
            context: "softmax_cross_entropy targets",
            left: vec![targets.len()],
            right: vec![n],
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(invalid!("class index {bad} out of range for {c} classes"));
    }
    let data = g.value(logits).data();
    let mut total = 0.0f64;
    for (row, &t) in targets.iter().enumerate() {
        let row_data = &data[row * c..][..c];
        let m = row_data
            .iter()
            .fold(f64::NEG_INFINITY, |acc, v| acc.max(v.to_f64()));
        let lse: f64 = row_data.iter().map(|v| (v.to_f64() - m).exp()).sum();
        total += m + lse.ln() - row_data[t].to_f64();
    }
    let targets = targets.to_vec();
    let inv_n = 1.0 / n as f64;
    Ok(g.push_op(
        Tensor::scalar(S::from_f64(total * inv_n)),
        &[logits],
        Box::new(move |ctx| {
            if !ctx.needs(logits) {
                return;
            }
            let go = ctx.out_grad()[0].to_f64() * inv_n;
            let mut delta = vec![S::ZERO; n * c];
            {
                let data = ctx.value(logits).data();
                for (row, &t) in targets.iter().enumerate() {
                    let row_data = &data[row * c..][..c];
                    let m = row_data
                        .iter()
                        .fold(f64::NEG_INFINITY, |acc, v| acc.max(v.to_f64()));
                    let exps: Vec<f64> = row_data.iter().map(|v| (v.to_f64() - m).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for (col, &e) in exps.iter().enumerate() {
                        let p = e / sum;
                        let ind = if col == t { 1.0 } else { 0.0 };
                        delta[row * c + col] = S::from_f64(go * (p - ind));
                    }
                }
            }
            ctx.accumulate(logits, &delta);
        }),
    ))
}

/// Huber loss, mean over all elements: 0.5 d^2 for |d| < 1, |d| - 0.5 beyond.
pub fn smooth_l1<S: Scalar>(g: &mut Graph<S>, pred: TensorId, target: TensorId) -> Result<TensorId> {
    if g.value(pred).shape() != g.value(target).shape() {
        return Err(Error::ShapeMismatch {
            context: "smooth_l1",
            left: g.value(pred).shape().to_vec(),
            right: g.value(target).shape().to_vec(),
        });
    }
    let numel = g.value(pred).numel();
    if numel == 0 {
        return Err(invalid!("smooth_l1 on empty tensor"));
    }
    let mut total = 0.0f64;
    for (&p, &t) in g.value(pred).data().iter().zip(g.value(target).data()) {
        let d = (p - t).to_f64();
        total += if d.abs() < 1.0 { 0.5 * d * d } else { d.abs() - 0.5 };
    }
    let inv_n = 1.0 / numel as f64;
    Ok(g.push_op(
        Tensor::scalar(S::from_f64(total * inv_n)),
        &[pred, target],
        Box::new(move |ctx| {
            let go = ctx.out_grad()[0].to_f64() * inv_n;
            let mut delta = vec![S::ZERO; numel];
            {
                let pv = ctx.value(pred).data();
                let tv = ctx.value(target).data();
                for ((slot, &p), &t) in delta.iter_mut().zip(pv).zip(tv) {
                    let d = (p - t).to_f64();
                    let dd = if d.abs() < 1.0 { d } else { d.signum() };
                    *slot = S::from_f64(go * dd);
                }
            }
            if ctx.needs(pred) {
                ctx.accumulate(pred, &delta);
            }
            if ctx.needs(target) {
                for v in delta.iter_mut() {
                    *v = -*v;
                }
                ctx.accumulate(target, &delta);
            }
        }),
    ))
}

/// Binary cross-entropy on logits against targets in [0, 1], mean-reduced.
/// Uses the stable form max(x,0) - x t + ln(1 + e^-|x|).
pub fn binary_cross_entropy<S: Scalar>(
    g: &mut Graph<S>,
    logits: TensorId,
    targets: TensorId,
) -> Result<TensorId> {
    if g.value(logits).shape() != g.value(targets).shape() {
        return Err(Error::ShapeMismatch {
            context: "binary_cross_entropy",
            left: g.value(logits).shape().to_vec(),
            right: g.value(targets).shape().to_vec(),
        });
    }
    let numel = g.value(logits).numel();
    if numel == 0 {
        return Err(invalid!("binary_cross_entropy on empty tensor"));
    }
    for &t in g.value(targets).data() {
        let t = t.to_f64();
        if !(0.0..=1.0).contains(&t) {
            return Err(invalid!("binary_cross_entropy target {t} outside [0,1]"));
        }
    }
    let mut total = 0.0f64;
    for (&x, &t) in g.value(logits).data().iter().zip(g.value(targets).data()) {
        let x = x.to_f64();
        let t = t.to_f64();
        total += x.max(0.0) - x * t + (1.0 + (-x.abs()).exp()).ln();
    }
    let inv_n = 1.0 / numel as f64;
    Ok(g.push_op(
        Tensor::scalar(S::from_f64(total * inv_n)),
        &[logits, targets],
        Box::new(move |ctx| {
            let go = ctx.out_grad()[0].to_f64() * inv_n;
            if ctx.needs(logits) {
                let mut delta = vec![S::ZERO; numel];
                {
                    let xv = ctx.value(logits).data();
                    let tv = ctx.value(targets).data();
                    for ((slot, &x), &t) in delta.iter_mut().zip(xv).zip(tv) {
                        let x = x.to_f64();
                        let sigma = 1.0 / (1.0 + (-x).exp());
                        *slot = S::from_f64(go * (sigma - t.to_f64()));
                    }
                }
                ctx.accumulate(logits, &delta);
            }
            if ctx.needs(targets) {
                let mut delta = vec![S::ZERO; numel];
                {
                    let xv = ctx.value(logits).data();
                    for (slot, &x) in delta.iter_mut().zip(xv) {
                        *slot = S::from_f64(-go * x.to_f64());
                    }
                }
                ctx.accumulate(targets, &delta);
            }
        }),
    ))
}
