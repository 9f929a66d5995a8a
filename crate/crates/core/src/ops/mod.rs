//! Forward and backward kernels for every layer type the networks use.
//!
//! Activations are row-major `[H, W, C]`, convolution kernels
//! `[kh, kw, c_in, c_out]`, dense weights `[in, out]`. The public functions
//! work on single-sample [`Tensor`]s; the slice kernels underneath are shared
//! with the batched network code in [`crate::model`].

pub(crate) mod activation;
pub(crate) mod conv;
pub(crate) mod dense;
pub(crate) mod loss;
pub(crate) mod pool;

pub use activation::{dropout, relu, relu_backward, DropoutMask};
pub use conv::{conv2d_backward, conv2d_forward, ConvParams};
pub use dense::{dense_backward, dense_forward, DenseParams};
pub use loss::{one_hot_index, softmax_xent};
pub use pool::{maxpool_backward, maxpool_forward, PoolArgmax};
