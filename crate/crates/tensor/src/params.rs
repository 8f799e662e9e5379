use indexmap::IndexMap;

use crate::error::{shape_err, Result, TensorError};
use crate::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Scalar = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named trainable tensors in insertion order, each with a gradient of identical dims.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T: Scalar = f32> {
    entries: IndexMap<String, Param<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    /// Inserts or replaces a parameter; its gradient is reset to zero.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let grad = Tensor::zeros(value.dims());
        self.entries.insert(name.into(), Param { value, grad });
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|p| &p.grad)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn add_grad(&mut self, name: &str, grad: &Tensor<T>) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        if p.grad.dims() != grad.dims() {
            return shape_err(format!(
                "gradient {:?} for parameter `{name}` of {:?}",
                grad.dims(),
                p.grad.dims()
            ));
        }
        p.grad.add_assign(grad);
        Ok(())
    }

    /// Multiplies every gradient by `factor` (e.g. averaging over accumulated batches).
    pub fn scale_grads(&mut self, factor: f64) {
        let f = T::from_f64(factor);
        for p in self.entries.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = *g * f);
        }
    }
}
