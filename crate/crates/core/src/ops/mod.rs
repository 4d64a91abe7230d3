//! Differentiable kernels: each exposes a forward evaluation and an exact
//! vector-Jacobian-product backward. Kernels are pure functions over
//! immutable inputs; parallel sections reduce in a fixed per-element
//! order, so outputs are independent of thread count.

pub mod activation;
pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod resize;

pub use activation::{
    relu_backward, relu_batch_backward, relu_batch_forward, relu_forward, softmax_channels,
    softmax_pair_backward, softmax_pair_forward,
};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads};
pub use elementwise::{
    add, concat_channels, concat_channels_backward, scale_channels, scale_channels_backward,
};
pub use linear::{linear_backward, linear_forward, LinearGrads};
pub use norm::{
    bn1d_eval_forward, bn1d_train_backward, bn1d_train_forward, bn2d_eval_forward,
    bn2d_train_backward, bn2d_train_forward, update_running_stats, Mode,
};
pub use pool::{
    adaptive_avg_pool_backward, adaptive_avg_pool_forward, global_avg_pool_backward,
    global_avg_pool_forward,
};
pub use resize::{bilinear_resize_backward, bilinear_resize_forward, bilinear_upsample_forward};
