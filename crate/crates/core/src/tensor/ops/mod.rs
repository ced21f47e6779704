//! Differentiable operations recorded on a [`Tape`](super::Tape).

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod resample;
mod shape;

pub use conv::{conv2d_forward, Conv2dArgs};
pub use norm::PoolMode;
pub use resample::{upsample2x_forward, UpsampleMode};

pub(crate) use linalg::attention_probs;
