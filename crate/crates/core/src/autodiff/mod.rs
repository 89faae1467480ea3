//! Minimal reverse-mode automatic differentiation over dense arrays.

mod array;
pub mod checkpoint;
mod optim;
mod params;
mod scalar;
mod tape;

use thiserror::Error;

pub use array::Array;
pub use checkpoint::CheckpointError;
pub use optim::{Adam, Optimizer, RmsProp};
pub use params::{Binding, ParamId, ParameterEntry, ParameterSet};
pub use scalar::{Real, Scalar};
pub use tape::{softmax, BackwardStats, LstmWeights, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: dimension mismatch, expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("target index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
}
