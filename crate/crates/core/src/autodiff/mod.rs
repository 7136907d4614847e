//! Minimal reverse-mode differentiation in double precision, the layers the
//! policy network needs, AdamW and a finite-difference gradient checker.

mod graph;
mod gradcheck;
pub mod nn;
mod optim;
mod tensor;

pub use gradcheck::{check_gradients, grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Var};
pub use optim::{cosine_lr, AdamW, AdamWConfig};
pub use tensor::{Gradients, Param, ParamId, ParamStore, Tensor};
