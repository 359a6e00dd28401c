//! Minimal dense-tensor core with reverse-mode differentiation.
//!
//! Sized for this model family: 64-bit floats everywhere, graphs of a few
//! thousand nodes, parameters shared read-only across worker threads while a
//! single loop owns updates.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    compare_gradients, finite_difference_gradient, max_relative_error, GradcheckReport,
};
pub use optim::{OptimConfig, Optimizer, OptimizerKind};
pub use params::{Gradients, ParamId, Params};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
