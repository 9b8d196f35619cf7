//! Simulator for RIS-aided monostatic sensing: multipath OFDM synthesis,
//! signal separation, adaptive detection probabilities, CRLB-level
//! measurements and Poisson multi-Bernoulli mapping of scattering points.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod campaign;
pub mod channel;
pub mod config;
pub mod detection;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod measurement;
pub mod metrics;
pub mod separation;
pub mod tensor;
pub mod tracking;

pub use error::{Error, Result};
