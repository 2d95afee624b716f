use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Named trainable tensors. Iteration order is the lexical order of names,
/// which keeps every traversal (init, Adam, serialization) deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Adds every tensor to `graph` as a differentiable leaf.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), graph.param(v.clone())))
            .collect();
        Bound { vars }
    }

    /// Adds every tensor to `graph` as a constant (inference).
    pub fn bind_frozen(&self, graph: &mut Graph) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), graph.constant(v.clone())))
            .collect();
        Bound { vars }
    }
}

/// Name-to-node map for one graph.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    /// Collects gradients after [`Graph::backward`]; parameters the loss
    /// never reached get zero gradients.
    pub fn grads(&self, graph: &Graph, params: &ParamSet) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, &v) in &self.vars {
            let g = graph
                .grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(params.get(name).map_or(&[][..], Tensor::shape)));
            out.insert(name.clone(), g);
        }
        out
    }
}
