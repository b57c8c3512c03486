use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Index of a registered parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable arrays in registration order. Every array appears once.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("parameter `{name}` registered twice")));
        }
        let id = self.values.len();
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn get_by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name).map(|&i| &self.values[i])
    }

    pub fn values(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.values.iter()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.values.iter_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Replaces the value of parameter `name`; its shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let &i = self
            .by_name
            .get(name)
            .ok_or_else(|| Error::Data(format!("unknown parameter `{name}`")))?;
        if self.values[i].shape() != value.shape() {
            return Err(Error::dim("ParamStore::set", self.values[i].shape(), value.shape()));
        }
        self.values[i] = value;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Records every parameter as an untracked leaf (inference).
    pub fn bind_constants<'t>(&self, tape: &'t Tape<T>) -> BoundParams<'t, T> {
        BoundParams {
            vars: self.values.iter().map(|v| tape.constant(v.clone())).collect(),
        }
    }

    /// Records every parameter as a tracked leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundParams<'t, T> {
        BoundParams {
            vars: self.values.iter().map(|v| tape.param(v.clone())).collect(),
        }
    }
}

/// Tape handles of a [`ParamStore`], indexable by [`ParamId`].
pub struct BoundParams<'t, T> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> BoundParams<'t, T> {
    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }

    /// Gradients in registration order, zero-filled for unreached parameters.
    pub fn collect_grads(&self, grads: &mut crate::tensor::Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|&v| grads.take_or_zeros(v)).collect()
    }
}

impl<'t, T> std::ops::Index<usize> for BoundParams<'t, T> {
    type Output = Var<'t, T>;

    fn index(&self, i: usize) -> &Var<'t, T> {
        &self.vars[i]
    }
}
