//! Minimal reverse-mode automatic differentiation and the neural primitives
//! composed by the rest of the crate.

mod conv;
mod gemm;
mod gradcheck;
mod graph;
mod layers;
mod ops;
mod optim;
mod params;
mod real;
mod tensor;

pub use conv::conv2d_forward;
pub use gradcheck::{finite_diff_check, finite_diff_gradient};
pub use graph::{Backward, Gradients, Graph, Var};
pub use layers::{commit, BatchNorm, Conv2d, Ctx, Linear, Mode, BN_EPS, BN_MOMENTUM};
pub(crate) use ops::sigmoid;
pub use optim::{lr_at_epoch, Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
