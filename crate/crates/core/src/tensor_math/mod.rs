//! Dense tensors, differentiable layer primitives, Adam, and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod layers;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, finite_diff_check_at, relative_error};
pub use layers::{
    activation_backward, activation_forward, avg_pool_backward, avg_pool_forward, conv2d_backward,
    conv2d_backward_input, conv2d_forward, linear_backward, linear_backward_input, linear_forward, sigmoid, Activation,
    ConvGeometry, ConvGrads, LinearGrads,
};
pub(crate) use tensor::gemm;
pub use tensor::Tensor;
