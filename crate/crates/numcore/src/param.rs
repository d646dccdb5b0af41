use std::collections::HashMap;

use rand::Rng;

use crate::error::{NumError, Result};
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Owns every named parameter of a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NumError::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, tensor, trainable: true });
        Ok(id)
    }

    /// Uniform(-1/sqrt(fan), 1/sqrt(fan)) initialisation, rounded to f32.
    pub fn add_uniform<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], fan: usize, rng: &mut R) -> Result<ParamId> {
        let bound = 1.0 / (fan.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| Precision::F32.round(rng.gen_range(-bound..bound))).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Result<ParamId> {
        self.add(name, Tensor::full(shape, value))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.set_grad(None);
        }
    }

    /// Adds `grads[i]` into parameter i's gradient, scaled by `scale`.
    pub fn accumulate(&mut self, grads: &ParamGrads, scale: f64) {
        for (id, g) in grads.iter() {
            let acc = self.params[id.0].tensor.grad_mut();
            for (a, &x) in acc.iter_mut().zip(g) {
                *a += scale * x;
            }
        }
    }
}

/// Sparse set of per-parameter gradients produced by one backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamGrads {
    entries: Vec<(ParamId, Vec<f64>)>,
}

impl ParamGrads {
    pub fn push(&mut self, id: ParamId, grad: Vec<f64>) {
        match self.entries.iter_mut().find(|(i, _)| *i == id) {
            Some((_, g)) => {
                for (a, b) in g.iter_mut().zip(grad) {
                    *a += b;
                }
            }
            None => self.entries.push((id, grad)),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.entries.iter().find(|(i, _)| *i == id).map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.entries.iter().map(|(i, g)| (*i, g.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
