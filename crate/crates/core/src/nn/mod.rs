//! Small reverse-mode tensor engine: per-operator forward/backward, losses, optimizers,
//! a finite-difference gradient checker and checkpoints.

mod checkpoint;
mod gradcheck;
pub mod kernels;
mod loss;
mod module;
mod optim;
mod tensor;

use rand::Rng;
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointEntry, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{loss_ce, loss_mse};
pub use module::ModuleInstance;
pub use optim::{sgd_step, Adam};
pub use tensor::Tensor;

use crate::graph::OperatorSpec;
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("backward called without a retained forward pass")]
    StaleState,
    #[error("invalid operator: {0}")]
    InvalidOp(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Learnable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.dims());
        Parameter { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Operators applied in sequence.
#[derive(Debug, Clone)]
pub struct Sequential<T> {
    pub layers: Vec<ModuleInstance<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new<R: Rng>(specs: &[OperatorSpec], rng: &mut R) -> Result<Self, NnError> {
        let layers = specs.iter().map(|s| ModuleInstance::new(s.clone(), rng)).collect::<Result<_, _>>()?;
        Ok(Sequential { layers })
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut cur = x.clone();
        for l in &mut self.layers {
            cur = l.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut g = upstream.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(ModuleInstance::zero_grad);
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut().values_mut())
    }

    /// `(name, parameter)` with names `layers.{i}.{param}`.
    pub fn named_params(&self) -> Vec<(String, &Parameter<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.params().iter().map(move |(n, p)| (format!("layers.{i}.{n}"), p)))
            .collect()
    }

    /// Sum of squared weights, the `||w||^2` term of the regularized loss.
    pub fn weight_sq_norm(&self) -> T {
        self.layers.iter().flat_map(|l| l.params().values()).map(|p| p.value.sum_sq()).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(ModuleInstance::parameter_count).sum()
    }
}
