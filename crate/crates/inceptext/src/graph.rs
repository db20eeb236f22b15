//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A `Graph` is rebuilt for every forward pass. Nodes are appended in
//! topological order; `backward` walks them once in reverse, handing each
//! node's output gradient to the backward closure recorded at forward time.
//! Gradients accumulate additively across fan-out, and the traversal order is
//! fixed, so two backward passes over the same graph are bitwise identical.

use crate::error::{invalid, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node in a `Graph`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

pub(crate) struct Node<S: Scalar> {
    value: Tensor<S>,
    grad: Option<Tensor<S>>,
    /// Leaf for which the caller wants d(root)/d(node) retained.
    requires_grad: bool,
    /// True when this node or anything upstream of it requires gradients;
    /// backward work is skipped for subgraphs where it is false.
    tracked: bool,
    backward: Option<BackwardFn<S>>,
}

/// Backward closure: reads input values through the context and accumulates
/// into input gradients.
pub type BackwardFn<S> = Box<dyn Fn(&mut BackwardCtx<'_, S>)>;

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf tensor. With `requires_grad`, `backward` will populate
    /// its gradient.
    pub fn input(&mut self, value: Tensor<S>, requires_grad: bool) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            tracked: requires_grad,
            backward: None,
        });
        id
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<S>) -> TensorId {
        self.input(value, false)
    }

    /// Append an operation node. `inputs` must already live in this graph;
    /// `backward` is invoked during the reverse sweep when any input is
    /// tracked. Public so tests can register custom (including deliberately
    /// wrong) operators.
    pub fn push_op(
        &mut self,
        value: Tensor<S>,
        inputs: &[TensorId],
        backward: BackwardFn<S>,
    ) -> TensorId {
        let id = TensorId(self.nodes.len());
        for input in inputs {
            debug_assert!(input.0 < id.0, "graph inputs must precede their node");
        }
        let tracked = inputs.iter().any(|i| self.nodes[i.0].tracked);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            tracked,
            backward: if tracked { Some(backward) } else { None },
        });
        id
    }

    pub fn value(&self, id: TensorId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` root w.r.t. this leaf, if any.
    pub fn grad(&self, id: TensorId) -> Option<&Tensor<S>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn tracked(&self, id: TensorId) -> bool {
        self.nodes[id.0].tracked
    }

    /// Reverse sweep from a scalar root. Every `requires_grad` leaf reachable
    /// from the root ends up with its gradient populated.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        let root_node = &self.nodes[root.0];
        if !root_node.value.is_scalar() {
            return Err(invalid!(
                "backward root must be scalar, got shape {:?}",
                root_node.value.shape()
            ));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<S>>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(vec![S::ONE]);

        for i in (0..=root.0).rev() {
            if grads[i].is_none() {
                continue;
            }
            let node = &self.nodes[i];
            if !node.tracked {
                grads[i] = None;
                continue;
            }
            let out_grad = grads[i].take().expect("checked above");
            if let Some(backward) = &node.backward {
                let (before, at) = self.nodes.split_at(i);
                let (upstream_grads, _) = grads.split_at_mut(i);
                let mut ctx = BackwardCtx {
                    nodes: before,
                    out_node: &at[0],
                    out_grad: &out_grad,
                    grads: upstream_grads,
                };
                backward(&mut ctx);
            }
            if self.nodes[i].requires_grad {
                let shape = self.nodes[i].value.shape().to_vec();
                self.nodes[i].grad = Some(
                    Tensor::new(shape, out_grad).expect("gradient shape matches value"),
                );
            }
        }
        Ok(())
    }
}

/// View handed to backward closures: input values are readable, input
/// gradients writable, and the node's own output value/gradient available.
pub struct BackwardCtx<'a, S: Scalar> {
    nodes: &'a [Node<S>],
    out_node: &'a Node<S>,
    out_grad: &'a [S],
    grads: &'a mut [Option<Vec<S>>],
}

impl<'a, S: Scalar> BackwardCtx<'a, S> {
    pub fn value(&self, id: TensorId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn out_value(&self) -> &Tensor<S> {
        &self.out_node.value
    }

    pub fn out_grad(&self) -> &[S] {
        self.out_grad
    }

    /// Whether gradient work for this input is worth doing at all.
    pub fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].tracked
    }

    /// Mutable gradient buffer for a tracked input, zero-initialized on first
    /// touch. Returns None for untracked inputs.
    pub fn grad_mut(&mut self, id: TensorId) -> Option<&mut [S]> {
        if !self.nodes[id.0].tracked {
            return None;
        }
        let numel = self.nodes[id.0].value.numel();
        Some(
            self.grads[id.0]
                .get_or_insert_with(|| vec![S::ZERO; numel])
                .as_mut_slice(),
        )
    }

    /// Add `delta` into the gradient of `id` (no-op when untracked).
    pub fn accumulate(&mut self, id: TensorId, delta: &[S]) {
        if let Some(g) = self.grad_mut(id) {
            debug_assert_eq!(g.len(), delta.len());
            for (a, b) in g.iter_mut().zip(delta) {
                *a += *b;
            }
        }
    }
}

/// Central-difference gradient of a scalar-valued function, the oracle every
/// backward implementation is verified against.
///
/// Runs in f64; each element is perturbed by ±h and the function re-evaluated,
/// so the cost is 2·numel forward passes.
pub fn finite_difference_gradient<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<Tensor<f64>>
where
    F: Fn(&Tensor<f64>) -> Result<f64> + Sync + Send,
{
    if h <= 0.0 {
        return Err(invalid!("finite difference step must be positive, got {h}"));
    }
    let results = crate::parallel::par_map_collect(x.numel(), |i| -> Result<f64> {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let fp = f(&plus)?;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let fm = f(&minus)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("finite_difference_gradient objective"));
        }
        Ok((fp - fm) / (2.0 * h))
    });
    let mut data = Vec::with_capacity(x.numel());
    for r in results {
        data.push(r?);
    }
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn backward_requires_scalar_root() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.input(Tensor::zeros(vec![3]), true);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.input(Tensor::new(vec![3], vec![1.0, -2.0, 5.0]).unwrap(), true);
        let s = ops::sum_all(&mut g, x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn chain_rule_through_square() {
        // root = sum(x * x), x = [1, 2]  =>  grad = [2, 4]
        let mut g: Graph<f32> = Graph::new();
        let x = g.input(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
        let sq = ops::mul(&mut g, x, x).unwrap();
        let s = ops::sum_all(&mut g, sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn fanout_gradients_accumulate() {
        // y = x + x  =>  dy/dx = 2 per element.
        let mut g: Graph<f32> = Graph::new();
        let x = g.input(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap(), true);
        let y = ops::add(&mut g, x, x).unwrap();
        let s = ops::sum_all(&mut g, y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let build = || {
            let mut g: Graph<f32> = Graph::new();
            let x = g.input(
                Tensor::from_fn(vec![8], |i| (i as f32 * 0.37).sin()),
                true,
            );
            let y = ops::mul(&mut g, x, x).unwrap();
            let z = ops::add(&mut g, y, x).unwrap();
            let r = ops::relu(&mut g, z);
            let s = ops::sum_all(&mut g, r);
            g.backward(s).unwrap();
            g.grad(x).unwrap().data().to_vec()
        };
        let a = build();
        let b = build();
        assert_eq!(a, b);
    }

    #[test]
    fn untracked_subgraph_gets_no_gradient() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.input(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), false);
        let y = ops::mul(&mut g, x, x).unwrap();
        let s = ops::sum_all(&mut g, y);
        g.backward(s).unwrap();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn finite_difference_of_sum_of_squares() {
        let x = Tensor::new(vec![1], vec![3.0f64]).unwrap();
        let g = finite_difference_gradient(
            |t| Ok(t.data().iter().map(|v| v * v).sum()),
            &x,
            1e-3,
        )
        .unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_difference_rejects_non_finite() {
        let x = Tensor::new(vec![1], vec![0.0f64]).unwrap();
        let r = finite_difference_gradient(|t| Ok(1.0 / t.data()[0]), &x, 1e-3);
        assert!(r.is_ok()); // 1/h is finite
        let r = finite_difference_gradient(|_| Ok(f64::NAN), &x, 1e-3);
        assert!(r.is_err());
    }
}
