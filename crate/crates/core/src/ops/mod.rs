//! Differentiable tensor operations recorded on a [`Tape`](crate::Tape).

mod activation;
mod conv;
mod elementwise;
mod norm;
mod pool;

pub use conv::{conv_out_size, conv_transpose_out_size, Conv2dGeometry};
pub use norm::BatchStats;
