//! Dense `f64` arrays with reverse-mode differentiation.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{finite_difference_check, relative_error, Coordinate, GradCheckReport};
pub(crate) use graph::logsumexp;
pub use graph::{Graph, OpKind, Var};
pub use params::{Bound, ParamSet};
pub use tensor::Tensor;
