//! A small reverse-mode differentiable array engine.
//!
//! Values are dense `f64` arrays in row-major order. A [`Graph`] records
//! operations as they run; [`Graph::backward`] walks the record in reverse
//! and returns gradients for every node that depends on a parameter.
//! Trainable state lives in a [`ParamSet`] and is bound into a graph by name
//! with [`Graph::param`], so one parameter used twice in a forward pass
//! accumulates both contributions.

mod conv;
mod gemm;
mod graph;
pub mod gradcheck;
pub mod init;
pub mod nn;
pub mod optim;
mod params;
mod serialize;

pub use conv::{ConvGeom, Padding};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{BnMode, Gradients, Graph, RunningStats, Var, BN_EPS, BN_MOMENTUM};
pub use optim::{sgd_step, Adam, Momentum};
pub use params::ParamSet;
pub use serialize::{
    load_params, manifest_text, params_from_bytes, params_to_bytes, parse_manifest, save_params,
    ManifestEntry,
};

use crate::{Error, Result};

/// A dense array with optional gradient storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if numel(&shape) != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {} values, got {}",
                numel(&shape),
                values.len()
            )));
        }
        Ok(Self {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            values: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            values: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            values: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor as trainable.
    pub fn trainable(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<f64>>) {
        self.grad = grad;
    }

    pub(crate) fn grad_mut(&mut self) -> &mut Vec<f64> {
        let n = self.values.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }
}
