//! Convolutional classifiers for nuclear attributes and shapes: a
//! center-weighted convolutional autoencoder for pretraining, CNN variants
//! with feedback and injected-feature slots, multi-task losses, two-cycle
//! training, and ROC-based evaluation.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod model;
pub mod parallel;
pub mod seed;
pub mod tensor;
pub mod training;

pub use error::{Error, ErrorKind, Result};
pub use tensor::{Real, Tensor};
