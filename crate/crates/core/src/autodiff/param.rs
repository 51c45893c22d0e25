use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Stable identifier of a trainable tensor. Ids are assigned when a model set
/// is built and never change, so they double as checkpoint keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub u32);

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    id: ParamId,
    name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(id: ParamId, name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            id,
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
    }

    /// Adds the gradient recorded for this parameter, if any.
    pub fn accumulate(&mut self, grads: &Gradients) {
        if let Some(g) = grads.get(self.id) {
            for (acc, v) in self.grad.data_mut().iter_mut().zip(g.data()) {
                *acc += v;
            }
        }
    }
}

/// Gradients of a scalar with respect to every parameter bound in a graph.
/// Parameters the root does not depend on are absent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    by_id: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub(crate) fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.by_id.insert(id, grad);
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_id.get(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.by_id.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}
