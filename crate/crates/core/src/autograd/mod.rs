//! Dense reverse-mode automatic differentiation over the operation set the
//! knowledge-tracing model needs.

mod gate;
mod graph;
mod tensor;

pub use gate::GateParam;
pub use graph::{Bags, GateId, Gradients, Graph, ParamId, Var, BCE_CLAMP, LAYER_NORM_EPS};
pub(crate) use graph::sigmoid;
pub use tensor::Tensor;
