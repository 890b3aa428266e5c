//! Minimal dense-tensor arithmetic with reverse-mode differentiation.
//!
//! Everything is `f64`: attribution integrals and gradient checks are
//! sensitive to accumulation error. A [`Tape`] records one forward pass;
//! [`Tape::backward`] consumes it and yields [`Gradients`] for every leaf
//! created with `requires_grad`.

mod tape;

pub use tape::{Gradients, Tape, VarId};

use crate::matrix::Matrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("conv1d dilation must be >= 1")]
    NonPositiveDilation,
    #[error("backward requires a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

/// Dense row-major tensor. `grad` is populated on `requires_grad` leaves
/// after a backward pass (see [`Gradients::assign`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length != product of shape"
        );
        Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(&[1], vec![v])
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self::from_vec(&[m.rows, m.cols], m.data.clone())
    }

    /// Marks this tensor as a differentiable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a scalar (1-element) tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// View as a matrix; the first axis becomes rows, the rest are
    /// flattened into columns.
    pub fn to_matrix(&self) -> Matrix {
        assert!(!self.shape.is_empty());
        let rows = self.shape[0];
        let cols = self.shape[1..].iter().product::<usize>().max(1);
        Matrix::from_vec(rows, cols, self.data.clone())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
