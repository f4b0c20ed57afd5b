//! Dense tensors, reverse-mode differentiation, layers and the Adam optimizer.

pub mod checkpoint;
mod graph;
pub mod nn;
mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use optim::{clip_global_norm, Adam, AdamConfig, AdamState, StepReport};
pub use params::{uniform_fan_in, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {0:?}: every dimension must be positive")]
    InvalidShape(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: &'static str },
    #[error("slice {start}..{end} out of bounds for {cols} columns")]
    SliceBounds { start: usize, end: usize, cols: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
