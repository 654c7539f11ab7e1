//! Differentiable layer vocabulary. Each op has a pure tensor kernel
//! (`*_forward`) and a [`Tape`](crate::autodiff::Tape) method that records it.

pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod upsample;

pub use conv::{conv2d_forward, Conv2dSpec};
pub use elementwise::{sigmoid, Activation};
pub use linear::linear_forward;
pub use loss::{argmax_channels, softmax_channels_forward};
pub use norm::{batchnorm2d_forward, BatchNormConfig, BnMode, RunningStats};
pub use pool::{channel_pool_forward, global_pool_forward, pool2d_forward, Pool2dSpec, PoolKind};
pub use upsample::upsample_bilinear_forward;
