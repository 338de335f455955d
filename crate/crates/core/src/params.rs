//! Named parameter storage and the per-step binding of parameters onto a tape.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Ordered collection of named learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter {}", name)));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).copied().map(move |i| &mut self.entries[i].1)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// A store with the same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamStore {
        let mut out = ParamStore::new();
        for (n, t) in self.iter() {
            out.insert(n, Tensor::zeros(t.shape())).expect("names are unique");
        }
        out
    }
}

/// One forward/backward pass: a fresh tape plus lazily bound parameter leaves.
pub struct Session<'p> {
    pub graph: Graph,
    store: &'p ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'p> Session<'p> {
    /// Parameters are bound as gradient-requiring leaves.
    pub fn new(store: &'p ParamStore) -> Self {
        Session { graph: Graph::new(), store, bound: vec![None; store.len()] }
    }

    /// Forward-only session; nothing is recorded for backward.
    pub fn inference(store: &'p ParamStore) -> Self {
        Session { graph: Graph::inference(), store, bound: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let i = self.store.position(name).ok_or_else(|| Error::invalid(format!("unknown parameter {}", name)))?;
        if let Some(v) = self.bound[i] {
            return Ok(v);
        }
        let v = self.graph.leaf(self.store.entries[i].1.clone(), true);
        self.bound[i] = Some(v);
        Ok(v)
    }

    /// Gradients aligned with the store's order. Parameters that were never
    /// bound, or received no gradient, get zeros.
    pub fn gradients(&mut self) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(self.store.len());
        for (i, (_, t)) in self.store.entries.iter().enumerate() {
            let g = self.bound[i].and_then(|v| self.graph.take_grad(v));
            out.push(g.unwrap_or_else(|| Tensor::zeros(t.shape())));
        }
        out
    }
}
