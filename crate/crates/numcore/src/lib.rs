//! Minimal dense-tensor numerics for the dialogue model: a reverse-mode
//! autodiff tape over row-major matrices, attention and recurrent building
//! blocks, Adam, and a finite-difference gradient checker.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod param;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{NumError, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{sigmoid, Graph, Reduction, Var};
pub use nn::{causal_mask, positional_encoding, Attended, GruCell, LayerNorm, Linear, MultiHeadAttention};
pub use param::{ParamGrads, ParamId, ParamStore, Parameter};
pub use tensor::{Precision, Tensor};
