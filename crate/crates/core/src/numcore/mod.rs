//! Dense tensors, a reverse-mode tape, and the Adam optimizer.

mod adam;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{sigmoid, Gradients, Tape, Var, PROB_CLAMP};
pub use tensor::Tensor;

