//! Simulation and method-of-moments calibration of one- and two-asset
//! quadratic Hawkes / MQARCH volatility-feedback models.
//!
//! The pipeline is: [`simulate`] or load data, [`preprocess`] it into a
//! [`preprocess::BinnedPanel`], estimate a [`moments::CovarianceSuite`],
//! then recover the kernels with the Yule-Walker systems in [`yulewalker`].
//! [`mle`] refines parametric fits and [`factor`] runs the one-factor
//! stock pipeline.

pub mod error;
pub mod exec;
pub mod factor;
pub mod linalg;
pub mod mle;
pub mod model;
pub mod moments;
pub mod preprocess;
pub mod simulate;
pub mod yulewalker;

pub use error::{Error, ErrorCategory, Result};
pub use exec::Exec;
