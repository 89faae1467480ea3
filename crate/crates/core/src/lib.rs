//! StateNet dialogue state tracking: a small reverse-mode autodiff engine,
//! corpus and embedding loading, turn featurization, the model, training and
//! evaluation.

pub mod autodiff;
pub mod corpus;
pub mod embeddings;
pub mod evaluation;
mod error;
pub mod featurizer;
pub mod model;
pub mod synthetic;
pub mod tracker;
pub mod training;

pub use error::{Error, Result};
