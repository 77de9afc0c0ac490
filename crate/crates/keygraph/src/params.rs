//! Learned parameters and their gradient slots.

use crate::tensor::{Scalar, Tensor};

/// Index of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// A named value with a gradient accumulator of the same shape.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub id: ParamId,
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

/// Flat registry of all parameters of a model, in creation order. The
/// order is what makes checkpoints and optimizer state deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.params.push(Parameter {
            id,
            name: name.into(),
            value,
            grad,
            trainable: true,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Adds `scale * grads` into the gradient slots. Frozen parameters
    /// are skipped so they contribute nothing to clipping or updates.
    pub fn accumulate(&mut self, grads: &ParamGrads<T>, scale: T) {
        for (id, g) in &grads.entries {
            let p = &mut self.params[id.0];
            if !p.trainable {
                continue;
            }
            debug_assert_eq!(p.grad.shape(), g.shape(), "grad shape for {}", p.name);
            for (slot, &contrib) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *slot = *slot + scale * contrib;
            }
        }
    }
}

/// Per-parameter gradients produced by one backward pass, sorted by id.
#[derive(Debug, Clone)]
pub struct ParamGrads<T> {
    pub entries: Vec<(ParamId, Tensor<T>)>,
}
