//! Named parameter and buffer storage shared by the tape and optimizers.

use std::collections::HashMap;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), trainable: Vec::new(), index: HashMap::new() }
    }

    fn insert(&mut self, name: &str, t: Tensor<T>, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(CoreError::invalid(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.trainable.push(trainable);
        Ok(())
    }

    /// Registers a trainable tensor.
    pub fn add(&mut self, name: &str, mut t: Tensor<T>) -> Result<()> {
        t.requires_grad = true;
        self.insert(name, t, true)
    }

    /// Registers state that is checkpointed but never optimized.
    pub fn add_buffer(&mut self, name: &str, mut t: Tensor<T>) -> Result<()> {
        t.requires_grad = false;
        self.insert(name, t, false)
    }

    fn idx(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| CoreError::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.tensors[self.idx(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let i = self.idx(name)?;
        Ok(&mut self.tensors[i])
    }

    pub fn is_trainable(&self, name: &str) -> Result<bool> {
        Ok(self.trainable[self.idx(name)?])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Entries in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().zip(&self.trainable).filter(|(_, &t)| t).map(|(n, _)| n.as_str())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().zip(&self.trainable).filter(|(_, &t)| t).map(|(t, _)| t.len()).sum()
    }

    /// FNV-1a over names, shapes and the exact bit patterns of all values.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (name, t) in self.iter() {
            eat(name.as_bytes());
            t.shape().iter().for_each(|&d| eat(&(d as u64).to_le_bytes()));
            t.data().iter().for_each(|v| eat(&v.as_f64().to_bits().to_le_bytes()));
        }
        h
    }
}
