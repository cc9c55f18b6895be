//! Hand-written neural network engine: tensors, layers with explicit
//! forward/backward passes, the assembled detector and a finite-difference
//! gradient checker.

pub mod attention;
pub mod conv;
pub mod gradcheck;
pub mod layers;
mod linalg;
pub mod model;
pub mod norm;
pub mod pool;
pub mod tensor;

pub use model::{model_backward, model_forward, ModelConfig, ModelParams};
pub use tensor::Tensor;

/// Train mode uses batch statistics and dropout; infer mode uses running
/// statistics and no dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
