//! Reverse-mode automatic differentiation on dense `f64` tensors.
//!
//! A [`Tape`] records primitive applications as they execute; [`Var`] is a
//! cheap handle to a recorded node. Calling [`Tape::backward`] on a
//! one-element root yields gradients for every gradient-requiring leaf.
//!
//! ```
//! use afx_autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.var(Tensor::from_vec(vec![2.0]));
//! let y = (x * x).sum();
//! let g = tape.backward(y).unwrap();
//! assert_eq!(g.get(x).unwrap().data(), &[4.0]);
//! ```
//!
//! Shape errors inside primitives are programming errors and panic; callers
//! that accept untrusted shapes validate them before recording.

mod elementwise;
mod fft;
mod gradcheck;
mod linalg;
mod op;
mod recurrent;
mod shape;
mod tape;
mod tensor;

pub use elementwise::sigmoid;
pub use fft::{irfft_frame, rfft_bins, rfft_frame};
pub use gradcheck::grad_check;
pub use rustfft::num_complex::Complex64;
pub use tape::{Gradients, NodeId, Precision, Tape, Var};
pub use tensor::{broadcast_shape, numel, Tensor};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AdError {
    #[error("backward root must have exactly one element, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("variable does not belong to this tape")]
    OffTape,
    #[error("node {node} has no gradient (constant or intermediate)")]
    NoGradient { node: NodeId },
    #[error("non-finite forward value {value}")]
    NonFinite { value: f64 },
}
