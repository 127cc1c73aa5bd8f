//! Knowledge tracing with a decoder-only transformer: multi-dataset
//! pre-training, gate-gradient importance on a low-resource target, and
//! importance-modulated fine-tuning.

pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod importance;
pub mod model;
pub mod scalar;
pub mod seed;
pub mod train;

#[cfg(test)]
mod test_util;

pub use error::{Error, ErrorClass, Result};
pub use model::LoReKTModel;
pub use scalar::Scalar;

pub type Tensor32 = autograd::Tensor<f32>;
pub type Tensor64 = autograd::Tensor<f64>;
pub type Model32 = model::LoReKTModel<f32>;
pub type Model64 = model::LoReKTModel<f64>;
pub type Profile32 = importance::ImportanceProfile<f32>;
pub type Profile64 = importance::ImportanceProfile<f64>;
