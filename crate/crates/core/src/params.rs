//! Named parameter storage shared by the backbone, adapters and head.

use indexmap::IndexMap;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Ordered name → tensor map. Insertion order is the serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::invalid(format!("parameter `{name}` already exists")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.tensors
            .keys()
            .filter(move |k| k.starts_with(prefix))
            .map(String::as_str)
    }

    /// Total element count of trainable tensors.
    pub fn trainable_count(&self) -> usize {
        self.tensors
            .values()
            .filter(|t| t.requires_grad())
            .map(Tensor::numel)
            .sum()
    }

    /// Sets the trainable flag on every tensor whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (name, t) in &mut self.tensors {
            if name.starts_with(prefix) {
                t.set_requires_grad(trainable);
            }
        }
    }

    /// Leaf for `name` in `g`, created from this store on first use.
    pub fn bind(&self, g: &mut Graph, name: &str) -> Result<NodeId> {
        if let Some(id) = g.get(name) {
            return Ok(id);
        }
        g.leaf(name, self.get(name)?.clone())
    }

    pub fn extend(&mut self, other: ParamStore) -> Result<()> {
        for (name, t) in other.tensors {
            self.insert(name, t)?;
        }
        Ok(())
    }
}

pub(crate) fn gaussian(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.normal(0.0, std)).collect();
    Tensor::new(shape, data).expect("shape and data agree")
}
