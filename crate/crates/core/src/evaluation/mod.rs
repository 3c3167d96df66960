//! Metrics and the synthetic experiment drivers.

mod experiment;
mod metrics;

pub use experiment::*;
pub use metrics::*;
