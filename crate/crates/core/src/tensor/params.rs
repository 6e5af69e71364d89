use std::collections::HashMap;
use std::sync::Arc;

use super::{Scalar, Tensor};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter<F: Scalar> {
    pub name: String,
    value: Arc<Tensor<F>>,
    pub grad: Tensor<F>,
}

impl<F: Scalar> Parameter<F> {
    pub fn value(&self) -> &Tensor<F> {
        &self.value
    }

    pub(crate) fn shared(&self) -> Arc<Tensor<F>> {
        Arc::clone(&self.value)
    }

    /// Copy-on-write when a tape still holds the old value.
    pub fn value_mut(&mut self) -> &mut Tensor<F> {
        Arc::make_mut(&mut self.value)
    }
}

/// Parameters in registration order with name lookup.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F: Scalar> {
    params: Vec<Parameter<F>>,
    by_name: HashMap<String, ParamId>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(invalid(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name: name.clone(), value: Arc::new(value), grad });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        self.params[id.0].value()
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(F::zero());
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Tensor<F>) {
        self.params[id.0].grad.add_assign(g);
    }
}

/// Anything that owns a parameter store, such as a whole model.
pub trait HasParams<F: Scalar> {
    fn params(&self) -> &ParamStore<F>;
    fn params_mut(&mut self) -> &mut ParamStore<F>;
}

impl<F: Scalar> HasParams<F> for ParamStore<F> {
    fn params(&self) -> &ParamStore<F> {
        self
    }

    fn params_mut(&mut self) -> &mut ParamStore<F> {
        self
    }
}
