//! Dense matrices, the differentiation graph and seeded randomness.

mod graph;
pub mod linalg;
mod matrix;
pub mod ops;
mod rng;

use thiserror::Error;

pub use graph::{DiffNode, Graph, NodeId};
pub use matrix::Matrix;
pub use ops::{layer_norm, matmul, softmax_rows};
pub use rng::{gaussian, uniform, SeededRng};

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("{op}: shape mismatch between {}x{} and {}x{}", left.0, left.1, right.0, right.1)]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("expected {expected} values, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("{0}")]
    Contract(String),
}
