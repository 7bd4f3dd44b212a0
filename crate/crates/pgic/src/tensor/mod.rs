//! Dense `f32` tensor engine: the value type, a recording tape for
//! reverse-mode differentiation, and an Adam optimizer.
//!
//! Feature maps use channels x height x width layout with row-major data.
//! The op set is deliberately small: exactly what the codec backbone needs.

mod adam;
mod kernels;
mod tape;

pub use adam::{adam_step, Parameter};
pub use kernels::{conv_depthwise, conv_pointwise, pixel_shuffle, pixel_unshuffle};
pub use tape::{Tape, Tracked};

use std::fmt;

/// Result alias for tensor operations.
pub type TensorResult<T> = Result<T, TensorError>;

/// Errors emitted by tensor ops, the tape, and the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorError {
    /// Constructor data length does not match the product of the shape.
    DataLength { expected: usize, got: usize },
    /// An axis extent is not divisible by the requested factor.
    NotDivisible {
        axis: &'static str,
        extent: usize,
        factor: usize,
    },
    /// Two operands have incompatible shapes.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// An op expected a different rank (e.g. CxHxW input).
    Rank {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },
    /// chunk2 needs an even channel count.
    OddChannels { channels: usize },
    /// Depthwise kernels must be odd-sized.
    EvenKernel { size: usize },
    /// backward() requires a scalar loss.
    NotScalar { shape: Vec<usize> },
    /// backward() was called twice on the same tape.
    BackwardConsumed,
    /// A gradient handed to the optimizer contains NaN or Inf.
    NonFiniteGrad { param: String },
    /// Optimizer state length does not match the parameter.
    OptimizerState { param: String },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            TensorError::NotDivisible { axis, extent, factor } => {
                write!(f, "{axis} extent {extent} is not divisible by factor {factor}")
            }
            TensorError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch {left:?} vs {right:?}")
            }
            TensorError::Rank { op, expected, got } => {
                write!(f, "{op}: expected rank-{expected} tensor, got shape {got:?}")
            }
            TensorError::OddChannels { channels } => {
                write!(f, "chunk2 requires an even channel count, got {channels}")
            }
            TensorError::EvenKernel { size } => {
                write!(f, "depthwise kernel size must be odd, got {size}")
            }
            TensorError::NotScalar { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            TensorError::BackwardConsumed => {
                write!(f, "backward was already called on this tape")
            }
            TensorError::NonFiniteGrad { param } => {
                write!(f, "non-finite gradient for parameter `{param}`")
            }
            TensorError::OptimizerState { param } => {
                write!(f, "optimizer state length mismatch for parameter `{param}`")
            }
        }
    }
}

impl std::error::Error for TensorError {}

/// Dense multi-dimensional array of `f32` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    /// Set on tensors registered as tape leaves that want gradients.
    pub requires_grad: bool,
    /// Populated by `Tape::write_leaf_grads` / optimizer plumbing.
    pub grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> TensorResult<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.is_empty()
    }

    pub fn scalar_value(&self) -> f32 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Interpret as a CxHxW feature map.
    pub fn dims3(&self, op: &'static str) -> TensorResult<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::Rank {
                op,
                expected: 3,
                got: self.shape.clone(),
            }),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_shape_product() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert_eq!(err, TensorError::DataLength { expected: 6, got: 5 });
    }

    #[test]
    fn scalar_has_empty_shape() {
        let s = Tensor::scalar(4.25);
        assert!(s.is_scalar());
        assert_eq!(s.scalar_value(), 4.25);
        assert_eq!(s.numel(), 1);
    }

    #[test]
    fn dims3_rejects_wrong_rank() {
        let t = Tensor::zeros(vec![4]);
        assert!(matches!(t.dims3("test"), Err(TensorError::Rank { .. })));
    }
}
