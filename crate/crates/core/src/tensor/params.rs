use std::collections::BTreeMap;

use super::{Gradients, Graph, Tensor};
use crate::{Error, Result};

/// Named parameter tensors plus the seed they were initialized from.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
    rng_seed: u64,
}

impl ParamSet {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            tensors: BTreeMap::new(),
            rng_seed,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("bad parameter name `{name}`")));
        }
        if self.tensors.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub(crate) fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.tensors
            .values()
            .filter(|t| t.requires_grad())
            .map(Tensor::len)
            .sum()
    }

    /// Sets every value of every tensor to zero.
    pub fn zero_values(&mut self) {
        for t in self.tensors.values_mut() {
            t.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn clear_grads(&mut self) {
        for t in self.tensors.values_mut() {
            t.set_grad(None);
        }
    }

    /// Adds the gradients of every trainable parameter bound in `g` to the
    /// stored gradients. Bound parameters the loss does not reach receive
    /// zeros; parameters never bound are left untouched.
    pub fn absorb(&mut self, g: &Graph, grads: &Gradients) {
        for (name, var) in g.bindings() {
            let Some(t) = self.tensors.get_mut(name) else {
                continue;
            };
            if !t.requires_grad() {
                continue;
            }
            let buf = t.grad_mut();
            if let Some(d) = grads.get(var) {
                buf.iter_mut().zip(d).for_each(|(b, d)| *b += d);
            }
        }
    }

    /// Writes recorded state updates whose names belong to this set.
    pub fn apply_state(&mut self, updates: &[(String, Vec<f64>)]) -> Result<()> {
        for (name, values) in updates {
            let Some(t) = self.tensors.get_mut(name) else {
                continue;
            };
            if t.len() != values.len() {
                return Err(Error::LengthMismatch {
                    what: "state update",
                    left: t.len(),
                    right: values.len(),
                });
            }
            t.values_mut().copy_from_slice(values);
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.values().iter().all(|v| v.is_finite()))
    }
}
