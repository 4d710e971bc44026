use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, VarId};
use crate::nn::tensor::{Scalar, Tensor};

/// Ordered, named parameter table. Iteration order is insertion order and
/// is what the optimizer and checkpoint format key off.
#[derive(Clone)]
pub struct ParamSet<F: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Replace all tensor values from another set with identical layout.
    pub fn load_from(&mut self, other: &ParamSet<F>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::config("parameter table layout mismatch on load"));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::config("parameter shape mismatch on load"));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}

/// Parameters bound onto a tape for one forward pass. Leaf ids are in
/// `ParamSet` insertion order so gradients can be collected positionally.
pub struct BoundParams {
    pub vars: Vec<VarId>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn bind<F: Scalar>(tape: &mut Tape<F>, params: &ParamSet<F>) -> Self {
        let vars = params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        BoundParams { vars, index: params.index.clone() }
    }

    pub fn var(&self, name: &str) -> VarId {
        self.vars[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))]
    }
}
