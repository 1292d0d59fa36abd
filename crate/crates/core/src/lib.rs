//! Hierarchical document classification with latent phrase-boundary
//! indicators trained by expectation-maximization.

pub mod autodiff;
pub mod data;
pub mod em;
pub mod error;
pub mod layers;
pub mod model;
pub mod simgen;

pub use error::{Error, Result};
