//! Feature-interaction CTR models (FM and CrossNet backbones with optional
//! parallel or stacked MLP heads), exact gradients, closed-form gradient
//! oracles, and dimensional-collapse diagnostics.
//!
//! Numeric code is generic over [`Scalar`] (`f32`, `f64`); the aliases below
//! fix the precision used by the command-line driver.

pub mod autograd;
pub mod cli;
pub mod closedform;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type Params64 = model::ModelParams<f64>;
pub type Params32 = model::ModelParams<f32>;
pub type Trace64 = model::ForwardTrace<f64>;
pub type Grads64 = autograd::GradBundle<f64>;
pub type Optim64 = autograd::OptimState<f64>;
