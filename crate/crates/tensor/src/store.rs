//! Named parameter storage and gradient containers.

use std::collections::BTreeMap;

use rand::Rng;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered, named collection of trainable tensors. Iteration order is the
/// registration order, which keeps checkpoints and updates deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.values.len();
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    /// Register a tensor initialized uniformly in +-1/sqrt(fan_in).
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        self.add(name, Tensor::uniform_fan_in(shape, fan_in, rng))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|i| ParamId(*i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> + '_ {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter())
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Copy every value from `other` (shapes and names must match).
    pub fn copy_from(&mut self, other: &ParamStore) {
        assert_eq!(self.names, other.names, "parameter sets differ");
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            assert_eq!(dst.shape(), src.shape());
            dst.data_mut().copy_from_slice(src.data());
        }
    }

    /// Exponential moving average update: self <- rho * other + (1 - rho) * self.
    pub fn soft_update_from(&mut self, other: &ParamStore, rho: f64) {
        assert_eq!(self.names, other.names, "parameter sets differ");
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = rho * s + (1.0 - rho) * *d;
            }
        }
    }
}

/// Per-parameter gradients aligned with a store.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
            shapes: store.ids().map(|id| store.value(id).shape().to_vec()).collect(),
        }
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor) {
        match &mut self.grads[id.0] {
            Some(existing) => {
                for (e, g) in existing.data_mut().iter_mut().zip(grad.data()) {
                    *e += g;
                }
            }
            slot @ None => *slot = Some(grad.clone()),
        }
    }

    /// Gradient for a parameter; zeros when it was unused by the loss.
    pub fn get(&self, id: ParamId) -> Tensor {
        self.grads[id.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }

    pub fn get_ref(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Global L2 norm over all gradients.
    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(Tensor::sq_norm)
            .sum::<f64>()
            .sqrt()
    }

    /// Scale all gradients so the global norm does not exceed `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let factor = max_norm / norm;
            for g in self.grads.iter_mut().flatten() {
                for v in g.data_mut() {
                    *v *= factor;
                }
            }
        }
    }

    pub fn merge(&mut self, other: &Gradients) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }
}
