//! Minimal dense-tensor autodiff used by the generator and discriminators.

pub mod conv;
mod direct;
pub mod graph;
pub mod param;
pub mod tensor;

pub use conv::ConvGeom;
pub use graph::{Gradients, Graph, Var};
pub use param::{Adam, AdamState, ParamSet};
pub use tensor::Tensor;
