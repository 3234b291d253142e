use std::collections::HashMap;

use crate::error::{shape_err, AutodiffError, Result};
use crate::tensor::{Gradients, Tape, Tensor};

/// A named, owned parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of named parameters. Plain data, so it can be shared
/// across worker threads; each worker binds it to its own tape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(shape_err(
                "param",
                format!("`{name}` has shape {shape:?} but {} values", data.len()),
            ));
        }
        if self.index.contains_key(&name) {
            return Err(shape_err("param", format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.params[i]),
            None => Err(AutodiffError::UnknownParam(name.to_string())),
        }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Materialises every parameter as a tensor: tape leaves when `tape` is
    /// given, constants otherwise.
    pub fn bind(&self, tape: Option<&Tape>) -> Result<BoundParams> {
        let tensors = self
            .params
            .iter()
            .map(|p| match tape {
                Some(t) => Tensor::leaf(t, p.shape.clone(), p.data.clone()),
                None => Tensor::constant(p.shape.clone(), p.data.clone()),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundParams {
            tensors,
            index: self.index.clone(),
        })
    }

    /// Binds caller-made tensors, one per parameter in store order.
    pub fn bind_tensors(&self, tensors: Vec<Tensor>) -> Result<BoundParams> {
        if tensors.len() != self.params.len() {
            return Err(shape_err(
                "bind_tensors",
                format!("{} tensors for {} parameters", tensors.len(), self.params.len()),
            ));
        }
        for (p, t) in self.params.iter().zip(&tensors) {
            if p.shape != t.shape() {
                return Err(shape_err(
                    "bind_tensors",
                    format!("`{}` expects {:?}, got {:?}", p.name, p.shape, t.shape()),
                ));
            }
        }
        Ok(BoundParams {
            tensors,
            index: self.index.clone(),
        })
    }

    /// True when both stores hold the same names and shapes in the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }
}

/// Parameters bound as tensors for one forward pass.
pub struct BoundParams {
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    /// Gradients in store order; parameters the loss did not touch get zeros.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| grads.get_or_zeros(t)).collect()
    }
}
