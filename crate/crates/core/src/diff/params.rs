use std::collections::BTreeMap;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter arrays. Iteration order is by name, which keeps
/// checkpoints and gradient reductions deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// A store of zeros with the same names and shapes.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamStore) {
        for (k, v) in self.params.iter_mut() {
            if let Some(o) = other.params.get(k) {
                v.add_assign(o);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.params.values_mut().for_each(|t| t.scale_inplace(c));
    }

    pub fn sq_norm(&self) -> f64 {
        self.params.values().map(Tensor::sq_norm).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
    }

    /// Records every parameter on `tape` as a borrowed leaf.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>) -> ParamVars {
        ParamVars {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.param(v)))
                .collect(),
        }
    }
}

/// Tape handles for a registered [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {name} not on tape")))
    }

    /// Collects parameter gradients into a store shaped like `like`; parameters
    /// the loss does not touch get zeros.
    pub fn gradients(&self, grads: &mut Gradients, like: &ParamStore) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, t) in like.iter() {
            let g = self
                .vars
                .get(name)
                .and_then(|&v| grads.take(v))
                .unwrap_or_else(|| Tensor::zeros(t.shape()));
            out.insert(name.clone(), g);
        }
        out
    }
}
