//! Simulation of adversarial attacks against federated anomaly detection on
//! smart-meter load profiles.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod federation;
pub mod fmt;
pub mod models;
pub mod par;
pub mod seed;

pub use error::{Error, Result};
