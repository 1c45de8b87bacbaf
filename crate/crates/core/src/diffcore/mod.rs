//! Minimal reverse-mode differentiation: tensors, a static layer graph, momentum
//! SGD, a finite-difference oracle, and the binary checkpoint container.

pub mod checkpoint;
mod gradcheck;
mod graph;
mod kernels;
mod params;
mod sgd;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_report, GradCheckReport};
pub use graph::{Graph, NodeId, OpKind};
pub use params::{he_uniform, ParamId, ParamStore};
pub use sgd::{sgd_step, SgdState};
pub use tensor::Tensor;
