use std::ops::Index;

use super::graph::{Grads, Graph, Var};
use super::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors of one network (or one group of networks).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Tape handles for every tensor of a store, valid for one [`Graph`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl Bound {
    /// Gradient per tensor, zero-filled where the loss did not depend on it.
    pub fn grads(&self, grads: &mut Grads, store: &ParamStore) -> Vec<Tensor> {
        self.0
            .iter()
            .zip(&store.tensors)
            .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Puts every tensor on the tape, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound(self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect())
    }

    /// Replaces a tensor by name, keeping its shape.
    pub fn set(&mut self, name: &str, t: Tensor) -> bool {
        match self.id(name) {
            Some(id) if self.tensors[id.0].len() == t.len() => {
                let shape = self.tensors[id.0].shape().to_vec();
                self.tensors[id.0] = t.reshape(shape);
                true
            }
            _ => false,
        }
    }

    /// Flat view of scalar `k` across all tensors (for finite differences).
    pub fn scalar_mut(&mut self, mut k: usize) -> &mut f64 {
        for t in &mut self.tensors {
            if k < t.len() {
                return &mut t.data_mut()[k];
            }
            k -= t.len();
        }
        panic!("scalar index out of range")
    }
}
