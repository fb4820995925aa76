//! Named trainable tensors and their per-graph bindings.

use std::collections::HashMap;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    /// Dense index in insertion order.
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter tensors with gradient buffers.
/// Insertion order is the canonical order (checkpoints, Adam state, init).
#[derive(Default, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter `{name}`"
        );
        let id = self.values.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|t| t.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, delta: &[f32]) {
        for (g, &d) in self.grads[id.0].data_mut().iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Insert every parameter into `graph`. With `trainable` false the values
    /// enter as constants (evaluation forwards skip all gradient work).
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Binding {
        let vars = self
            .values
            .iter()
            .map(|t| {
                if trainable {
                    graph.leaf(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        Binding { vars }
    }

    /// Copy graph gradients back into the store (adds to existing buffers).
    pub fn harvest(&mut self, graph: &Graph, binding: &Binding) -> Result<()> {
        for id in 0..self.values.len() {
            let var = binding.vars[id];
            match graph.grad_data(var) {
                Some(g) => self.accumulate_grad(ParamId(id), g),
                None => {
                    // Parameter unused by this graph (e.g. the other
                    // tokenizer in single-branch mode): gradient is zero.
                }
            }
        }
        Ok(())
    }
}

/// Parameter-to-node map for one graph.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn named(&self, store: &ParamStore, name: &str) -> Result<Var> {
        store
            .id(name)
            .map(|id| self.vars[id.0])
            .ok_or_else(|| Error::Config(format!("no parameter named `{name}`")))
    }
}
