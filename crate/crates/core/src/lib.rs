//! Probabilistic forecasting of conditionally non-stationary multivariate
//! time series.
//!
//! A conditional model `p(y_t | y_{t-B:t-1}, x_{t-B:t}; phi_t)` captures the
//! stationary part of the dynamics through an encoder, while the
//! time-varying parameter `phi_t = chi_t + b_phi` follows a Gaussian random
//! walk that restarts from its initial distribution with probability
//! `1 - lambda`. Training is variational; forecasting runs a
//! Rao-Blackwellized particle filter over `chi`.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`.

pub mod checkpoint;
pub mod conditional;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod forecaster;
pub mod metrics;
pub mod model;
pub mod posterior;
pub mod scalar;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Series = data::Series<f64>;
pub type Model = model::Model<f64>;
pub type ConditionalParams = conditional::ConditionalParams<f64>;
pub type DynamicsParams = dynamics::DynamicsParams<f64>;
pub type PosteriorParams = posterior::PosteriorParams<f64>;
pub type Ensemble = forecaster::Ensemble<f64>;
pub type Trainer = trainer::Trainer<f64>;
