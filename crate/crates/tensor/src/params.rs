use std::collections::btree_map::{self, BTreeMap};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Named trainable tensors, iterated in lexicographic name order.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T: Element = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        Self { tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        match self.tensors.entry(name.into()) {
            btree_map::Entry::Occupied(e) => Err(TensorError::DuplicateParam(e.key().clone())),
            btree_map::Entry::Vacant(e) => {
                e.insert(tensor);
                Ok(())
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
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

    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.tensors.values().for_each(Tensor::zero_grad);
    }
}

impl<T: Element> IntoIterator for ParamSet<T> {
    type Item = (String, Tensor<T>);
    type IntoIter = btree_map::IntoIter<String, Tensor<T>>;

    fn into_iter(self) -> Self::IntoIter {
        self.tensors.into_iter()
    }
}
