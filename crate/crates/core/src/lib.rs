//! Offline policy selection on finite-horizon MDPs.
//!
//! The crate pairs exact dynamic-programming oracles with the estimators an
//! offline selector can actually run on logged data: importance sampling,
//! fitted Q evaluation and Bellman-error scores (TDE, SBV and IBES with
//! holdout class selection). Hardness constructions, a reward-probe
//! reduction from evaluation to selection, and a seeded sweep harness make
//! the estimators comparable on ground truth.

pub mod approx;
pub mod be;
pub mod candidates;
pub mod config;
pub mod env;
pub mod error;
pub mod mdp;
pub mod method;
pub mod metrics;
pub mod ope;
pub mod reduction;
pub mod report;
pub mod rng;
pub mod selection;
mod serde_util;
pub mod sweep;

pub use error::{OpsError, Result};
