//! Layer primitives. Every layer exposes a forward pass that returns the
//! state its backward pass needs, and a backward pass that accumulates
//! parameter gradients into caller-owned buffers.

pub mod activation;
pub mod concat;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod pool;

pub use activation::{relu, sigmoid, softmax};
pub use concat::concat;
pub use conv::{conv2d_forward, Conv2d, ConvCache};
pub use dense::{dense_forward, Dense};
pub use dropout::dropout;
pub use pool::{maxpool2, upsample2, PoolCache};
