//! A self-contained CPU stack for a cascaded selective-resolution
//! segmentation network: dense rank-4 tensors with hand-written forward
//! and backward kernels, the pyramid-fusion and selective-resolution
//! blocks, heavy/medium/light model variants, a procedural multi-scale
//! scene dataset, and the training, evaluation, latency and activation-
//! map tooling around them.

pub mod backbone;
pub mod binio;
pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod ops;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ChannelBatch, ChannelVec, Dtype, Scalar, Shape4, Tensor4};
