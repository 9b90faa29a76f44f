//! Bilevel differentiable search for multimodal fusion networks.
//!
//! The upper level chooses which unimodal features (or earlier cells) feed
//! each fusion cell; the lower level chooses how each cell combines its two
//! inputs from a pool of bivariate operations. Both levels are relaxed with
//! softmax weights during search and collapsed by argmax into a
//! [`Genotype`], which is then trained from scratch as a discrete network.
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`); the aliases below
//! fix the common choice.

pub mod autograd;
pub mod cell;
pub mod config;
pub mod error;
pub mod feature_adapter;
pub mod genotype;
pub mod hypernet;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod oracle;
pub mod params;
pub mod scalar;
pub mod search;
pub mod tasks;
pub mod tensor;

pub use error::{FusionError, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
