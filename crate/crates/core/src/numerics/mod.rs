//! Dense tensors, a reverse-mode tape, and the AdamW optimizer.

mod gradcheck;
mod graph;
pub(crate) mod kernels;
pub mod layers;
mod params;
mod rng;
mod tensor;

pub use gradcheck::{central_difference, gradient_check, ElementCheck, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use params::{warmup_lr, AdamW, ParameterStore};
pub use rng::stream_rng;
pub use tensor::Tensor;
