use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// Named parameter tensors with deterministic (sorted) iteration order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
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

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Merges another store under a name prefix (`prefix.name`).
    pub fn absorb_prefixed(&mut self, prefix: &str, other: &ParamStore) {
        for (name, t) in other.iter() {
            self.insert(format!("{prefix}.{name}"), t.clone());
        }
    }

    /// Extracts the sub-store under a prefix, stripping it from the names.
    pub fn extract_prefixed(&self, prefix: &str) -> ParamStore {
        let lead = format!("{prefix}.");
        let mut out = ParamStore::new();
        for (name, t) in self.iter() {
            if let Some(rest) = name.strip_prefix(&lead) {
                out.insert(rest, t.clone());
            }
        }
        out
    }
}
