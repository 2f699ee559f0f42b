//! Simulation and correlation analysis of pulsed single-photon fields
//! measured with linear amplifiers and quadrature detectors.

pub mod calibration;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod filtering;
pub mod formats;
pub mod model;
pub mod pipeline;
pub mod reference;
pub mod sampler;
pub mod statistics;

pub use error::{Error, Result};
