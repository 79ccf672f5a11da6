//! Split edge/cloud context learning.
//!
//! Sigmoid networks are trained on a server (DCL, or the single-layer CL with
//! per-class thresholds), shipped to edge clients as checksummed parameter
//! bundles, and evaluated there with lightweight predictors (ADCL, LCL) that
//! keep working from the last bundle while the link is down.

pub mod data;
pub mod error;
pub mod learners;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sim;
pub mod sync;

pub use error::{Error, Result};
