//! Minimal differentiable tensor engine: exactly the primitives the
//! conditioning branch and the noise predictor need.

mod float;
pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod layers;
mod params;
mod tensor;

pub use float::Float;
pub use gradcheck::{grad_check, grad_check_with_step, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use layers::{time_embedding, Conv2d, Init};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::{numel, Shape, Tensor};
