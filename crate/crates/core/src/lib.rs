//! Subsampling mechanisms for adaptive data analysis.
//!
//! The crate answers adaptively chosen queries by evaluating them on small
//! random subsets of a sample, and ships exact small-instance oracles that
//! check the stability bounds such mechanisms rely on.
//!
//! * [`model`]: samples, populations, queries, transcripts, the error metric.
//! * [`engine`]: the subsampling primitive and exact response laws.
//! * [`divergence`]: KL and χ² divergences, stability bounds and verifiers.
//! * [`mechanisms`]: the statistical-query and approximate-median mechanisms,
//!   parameter schedules, costs and the budget ledger.
//! * [`harness`]: adaptive analysts, baselines and the experiment runner.
//! * [`cli`]: configuration files and the `adasub` command line.

pub mod cli;
pub mod combinatorics;
pub mod divergence;
pub mod engine;
pub mod error;
pub mod harness;
pub mod mechanisms;
pub mod model;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
