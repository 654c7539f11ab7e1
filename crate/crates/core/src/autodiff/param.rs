use std::collections::HashMap;

use crate::error::{contract, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Non-trainable entries (batch-norm running statistics) are persisted
    /// but never receive gradients or optimizer updates.
    pub trainable: bool,
}

/// Every learnable weight and persistent buffer of a network, keyed by a
/// dotted module path. Registration order is the canonical serialization order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    paths: Vec<String>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), paths: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, path: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        let path = path.into();
        if self.index.contains_key(&path) {
            return Err(Error::Config(format!("duplicate parameter path `{path}`")));
        }
        let id = self.params.len();
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { value, grad, trainable });
        self.index.insert(path.clone(), id);
        self.paths.push(path);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, id: ParamId) -> bool {
        id.0 < self.params.len()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn path(&self, id: ParamId) -> &str {
        &self.paths[id.0]
    }

    pub fn id_of(&self, path: &str) -> Option<ParamId> {
        self.index.get(path).copied().map(ParamId)
    }

    /// Replaces a value in place; the shape must not change.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        contract!(
            p.value.shape() == value.shape(),
            "parameter `{}` has shape {}, got {}",
            self.paths[id.0],
            p.value.shape(),
            value.shape()
        );
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), self.paths[i].as_str(), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// `(path, element count)` for every trainable parameter, in registration order.
    pub fn parameter_table(&self) -> Vec<(String, usize)> {
        self.iter()
            .filter(|(_, _, p)| p.trainable)
            .map(|(_, path, p)| (path.to_string(), p.value.len()))
            .collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.parameter_table().iter().map(|(_, n)| n).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter { value: p.value.cast(), grad: p.grad.cast(), trainable: p.trainable })
                .collect(),
            paths: self.paths.clone(),
            index: self.index.clone(),
        }
    }
}
