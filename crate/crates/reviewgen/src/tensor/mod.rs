//! Dense f64 tensors with a reverse-mode autodiff tape.
//!
//! Everything the network computes goes through [`Tape`]: forward ops record
//! nodes, `backward` replays them in reverse. A central-difference oracle
//! ([`finite_diff_grad`]) verifies the analytic gradients.

mod adam;
mod check;
mod tape;

pub use adam::AdamState;
pub use check::{finite_diff_grad, group_relative_error};
pub use tape::{Tape, Var};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("dimension mismatch: {op} got shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: empty input not allowed")]
    EmptyInput { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("index {index} out of bounds for extent {extent} in {op}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        extent: usize,
    },
}

/// Dense row-major tensor of 64-bit reals.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    #[serde(default)]
    pub requires_grad: bool,
    #[serde(skip)]
    pub grad: Option<Box<Tensor>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length must equal product of shape"
        );
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn scalar(x: f64) -> Self {
        Tensor::new(vec![1], vec![x])
    }

    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let mut t = Tensor::new(shape, data);
        t.requires_grad = true;
        t
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a 2-D tensor; a 1-D tensor counts as a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Accumulate `g` into the stored gradient, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.data.len());
        let grad = self
            .grad
            .get_or_insert_with(|| Box::new(Tensor::zeros(self.shape.clone())));
        for (dst, src) in grad.data.iter_mut().zip(g) {
            *dst += *src;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}
