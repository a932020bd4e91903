//! Forward and backward kernels.
//!
//! Every op is a pure function of its arguments. Backward functions take the
//! forward inputs again rather than relying on hidden caches.

mod activation;
mod conv;
mod dense;
pub(crate) mod gemm;
mod pool;
mod sgd;

pub use activation::{cross_entropy, relu_backward, relu_forward, softmax, LOG_CLAMP};
pub(crate) use activation::softmax_row;
pub use conv::{conv2d_backward, conv2d_forward, output_extent};
pub use dense::{dense_backward, dense_forward};
pub use pool::{maxpool2d_backward, maxpool2d_forward, PoolIndex};
pub use sgd::{sgd_step, SgdConfig};
