//! Dense tensors, shared convolution/activation kernels, a small
//! reverse-mode op graph and a central-difference gradient checker.

mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use gradcheck::{
    check_gradients, grad_check, grad_check_with, relative_error, GradCheckConfig, GradReport,
    ParamError,
};
pub use graph::{backprop, evaluate, Forward, NodeId, Op, OpGraph};
pub use tensor::{gemm, DType, Real, Tensor};
