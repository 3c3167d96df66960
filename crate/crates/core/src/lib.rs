//! Stable learning with association-rule features: sample reweighting for
//! nonlinear decorrelation, rule mining and selection, weighted SVM/SVR, and
//! the synthetic benchmarks used to evaluate them.

pub mod data;
pub mod decorrelation;
pub mod error;
pub mod evaluation;
pub mod ingestion;
pub mod mining;
pub mod models;
pub mod optim;
pub mod selection;
pub mod synthesis;

pub use error::{Error, Result};
