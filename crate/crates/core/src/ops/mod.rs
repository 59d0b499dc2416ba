//! Forward and backward kernels for the layer set used by the networks.

mod activation;
mod conv;
mod linalg;
mod loss;
mod norm;
mod pool;

pub use activation::{relu, relu_backward};
pub use conv::{conv2d, conv2d_backward, Conv2dGeometry};
pub use linalg::{linear, linear_backward, matmul, matmul_backward};
pub use loss::{count_correct, softmax_cross_entropy};
pub use norm::{BatchNorm, BatchNormCache, NormMode, BN_EPS, BN_MOMENTUM};
pub use pool::{pool2d, pool2d_backward, PoolCache, PoolKind};
