//! Differentiable primitives. Every op is a pure function of its inputs;
//! backward passes are wired by hand.

mod activation;
mod conv;
mod dense;
mod dropout;
pub(crate) mod gemm;
mod pool;
mod tensor;

pub(crate) use activation::neg_log_prob;
pub use activation::{
    cross_entropy, cross_entropy_grad, relu, relu_backward, softmax, softmax_rows, PROB_FLOOR,
};
pub use conv::{conv2d_backward, conv2d_valid, ConvParams};
pub use dense::{
    dense_backward, dense_backward_batch, dense_forward, dense_forward_batch, DenseParams,
};
pub use dropout::{dropout_backward, dropout_forward, DropoutMask};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, PoolIndices};
pub use tensor::Tensor;
