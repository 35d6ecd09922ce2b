//! Class-imbalance training machinery for severity grading: per-class
//! gradient-norm loss reweighting, rotating balanced batching, a two-head
//! severity/axis classifier, a loss zoo and multi-averaging metrics, with a
//! deterministic synthetic data generator and experiment harness.

pub mod batching;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod reweight;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
