//! Named parameter storage and thin layer wrappers.
//!
//! A `ParamSet` owns every trainable tensor under a stable dotted name (the
//! checkpoint key). Each forward pass binds the set into a fresh graph; layer
//! structs hold `ParamId`s and read their tensors through the binding.

use crate::error::{invalid, Result};
use crate::graph::{Graph, TensorId};
use crate::ops::{self, ConvSpec};
use crate::rng::DetRng;
use crate::tensor::{Scalar, Tensor};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

pub struct ParamSet<S: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
    index: BTreeMap<String, usize>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new(), index: BTreeMap::new() }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<S>) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.tensors.len());
        self.index.insert(name.to_string(), id.0);
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    /// (name, tensor) pairs in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Push every parameter into a graph, returning the binding used by
    /// layer forwards.
    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> Binding {
        Binding {
            ids: self.tensors.iter().map(|t| g.input(t.clone(), trainable)).collect(),
        }
    }

    /// Build a binding from externally created graph ids (one per parameter,
    /// in registration order).
    pub fn binding_from_ids(&self, ids: &[TensorId]) -> Result<Binding> {
        if ids.len() != self.tensors.len() {
            return Err(invalid!(
                "binding expects {} ids, got {}",
                self.tensors.len(),
                ids.len()
            ));
        }
        Ok(Binding { ids: ids.to_vec() })
    }

    /// Overwrite a parameter (checkpoint load); the shape must match.
    pub fn load(&mut self, name: &str, tensor: Tensor<S>) -> Result<()> {
        let id = self
            .lookup(name)
            .ok_or_else(|| invalid!("unknown parameter {name}"))?;
        if self.tensors[id.0].shape() != tensor.shape() {
            return Err(crate::error::Error::ShapeMismatch {
                context: "parameter load",
                left: self.tensors[id.0].shape().to_vec(),
                right: tensor.shape().to_vec(),
            });
        }
        self.tensors[id.0] = tensor;
        Ok(())
    }
}

/// Graph ids of all parameters for one forward pass.
pub struct Binding {
    ids: Vec<TensorId>,
}

impl Binding {
    pub fn id(&self, p: ParamId) -> TensorId {
        self.ids[p.0]
    }

    pub fn all(&self) -> &[TensorId] {
        &self.ids
    }
}

/// He-style initial weights for a fan-in of `fan_in`.
pub fn he_init<S: Scalar>(rng: &mut DetRng, shape: Vec<usize>, fan_in: usize) -> Tensor<S> {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| S::from_f64(rng.normal() * std))
}

/// Convolution layer: weight, optional bias, geometry.
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl ConvLayer {
    pub fn init<S: Scalar>(
        ps: &mut ParamSet<S>,
        name: &str,
        spec: ConvSpec,
        rng: &mut DetRng,
    ) -> Self {
        let fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w;
        let weight = ps.add(
            &format!("{name}.weight"),
            he_init(rng, vec![spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w], fan_in),
        );
        let bias = Some(ps.add(&format!("{name}.bias"), Tensor::zeros(vec![spec.out_channels])));
        ConvLayer { weight, bias, spec }
    }

    /// All-zero weights and bias (deformable offset predictors start as the
    /// identity deformation).
    pub fn init_zero<S: Scalar>(ps: &mut ParamSet<S>, name: &str, spec: ConvSpec) -> Self {
        let weight = ps.add(
            &format!("{name}.weight"),
            Tensor::zeros(vec![spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w]),
        );
        let bias = Some(ps.add(&format!("{name}.bias"), Tensor::zeros(vec![spec.out_channels])));
        ConvLayer { weight, bias, spec }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        bound: &Binding,
        x: TensorId,
    ) -> Result<TensorId> {
        ops::conv2d(g, x, bound.id(self.weight), self.bias.map(|b| bound.id(b)), self.spec)
    }
}

/// Separable NxN convolution (1xN then Nx1).
pub struct FactorizedConvLayer {
    pub n: usize,
    pub row_weight: ParamId,
    pub col_weight: ParamId,
    pub bias: ParamId,
}

impl FactorizedConvLayer {
    pub fn init<S: Scalar>(
        ps: &mut ParamSet<S>,
        name: &str,
        n: usize,
        in_channels: usize,
        out_channels: usize,
        rng: &mut DetRng,
    ) -> Self {
        let row_weight = ps.add(
            &format!("{name}.row_weight"),
            he_init(rng, vec![out_channels, in_channels, 1, n], in_channels * n),
        );
        let col_weight = ps.add(
            &format!("{name}.col_weight"),
            he_init(rng, vec![out_channels, out_channels, n, 1], out_channels * n),
        );
        let bias = ps.add(&format!("{name}.bias"), Tensor::zeros(vec![out_channels]));
        FactorizedConvLayer { n, row_weight, col_weight, bias }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        bound: &Binding,
        x: TensorId,
    ) -> Result<TensorId> {
        ops::factorized_conv(
            g,
            x,
            self.n,
            bound.id(self.row_weight),
            bound.id(self.col_weight),
            Some(bound.id(self.bias)),
        )
    }
}

/// Fully connected layer on flattened vectors.
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearLayer {
    pub fn init<S: Scalar>(
        ps: &mut ParamSet<S>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut DetRng,
    ) -> Self {
        let weight = ps.add(&format!("{name}.weight"), he_init(rng, vec![out_dim, in_dim], in_dim));
        let bias = ps.add(&format!("{name}.bias"), Tensor::zeros(vec![out_dim]));
        LinearLayer { weight, bias }
    }

    /// Zero weights and bias (offset heads start as the identity deformation).
    pub fn init_zero<S: Scalar>(
        ps: &mut ParamSet<S>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = ps.add(&format!("{name}.weight"), Tensor::zeros(vec![out_dim, in_dim]));
        let bias = ps.add(&format!("{name}.bias"), Tensor::zeros(vec![out_dim]));
        LinearLayer { weight, bias }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        bound: &Binding,
        x: TensorId,
    ) -> Result<TensorId> {
        ops::linear(g, x, bound.id(self.weight), Some(bound.id(self.bias)))
    }
}
