//! Differentiable kernels over NCHW tensors.
//!
//! Every forward here has a hand-written backward registered through
//! [`BackwardOp`](crate::tensor::BackwardOp). Convolutions lower to
//! im2col + SGEMM per sample; samples run on the rayon pool and all
//! cross-sample reductions happen in batch order, so results do not depend
//! on the worker count.

mod conv;
mod elementwise;
mod gemm;
mod norm;
mod pool;

pub use conv::{conv2d, conv_transpose2d, conv_output_size, conv_transpose_output_size};
pub use elementwise::{add, mean, mul, relu, sigmoid, sum, Pointwise, pointwise};
pub use norm::{batch_norm2d, BatchNormMode};
pub use pool::max_pool2d;
