//! Dense f64 tensors, a define-by-run graph with reverse-mode gradients, the
//! Adam optimizer and a flat binary checkpoint format.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod ops;
mod optim;
mod params;
mod tensor;

pub use error::{KernelError, Result};
pub use graph::{Graph, Var, MASKED_SCORE};
pub use ops::{lstm_cell, softmax_tau, LstmWeights};
pub use optim::{optimizer_step, AdamConfig};
pub use params::{Gradients, Moments, ParamId, ParamStore};
pub use tensor::Tensor;
