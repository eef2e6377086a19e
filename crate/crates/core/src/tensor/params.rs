use std::collections::HashMap;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named learnable tensors in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t.requires_grad());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::Contract(format!("no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.tensors[i]),
            None => Err(Error::Contract(format!("no parameter named {name}"))),
        }
    }

    pub fn at(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a gradient-tracked leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                let mut leaf = Tensor::from_parts(t.shape().to_vec(), t.data().to_vec());
                leaf.requires_grad = true;
                tape.leaf(leaf)
            })
            .collect();
        BoundParams {
            vars,
            index: self.index.clone(),
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.grad = None);
    }

    /// Adds the tape gradients of the bound leaves into each parameter's `grad`.
    pub fn accumulate(&mut self, grads: &Gradients, bound: &BoundParams) {
        for (t, &v) in self.tensors.iter_mut().zip(&bound.vars) {
            match grads.get(v) {
                Some(g) => t.accumulate_grad(g),
                None => {
                    if t.grad.is_none() {
                        t.grad = Some(vec![0.0; t.numel()]);
                    }
                }
            }
        }
    }
}

/// Tape handles for a [`ParamStore`], addressable by name.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Contract(format!("no parameter named {name}")))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.index.get(name).map(|&i| self.vars[i])
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
