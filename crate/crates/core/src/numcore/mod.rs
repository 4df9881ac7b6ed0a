//! Numeric kernels: dense and CSR tensors, a reverse-mode tape, gradient
//! clipping and Adam.

mod optim;
mod sparse;
mod tape;
mod tensor;

pub use optim::{adam_step, clip_by_global_norm, global_norm, AdamConfig, AdamState};
pub use sparse::SparseMatrix;
pub use tape::{Elementwise, Gradients, Tape, Var};
pub use tensor::DenseTensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("variable is not recorded on this tape")]
    NotOnTape,
    #[error("non-finite value: {0}")]
    NonFinite(String),
}
