//! Dense f64 arrays, probability distributions and tape-based autodiff.

pub mod autodiff;
pub mod dist;
pub mod kernels;
pub mod tensor;

pub use autodiff::{Graph, Var};
pub use dist::{softmax, ProbabilityDistribution};
pub use tensor::Tensor;
