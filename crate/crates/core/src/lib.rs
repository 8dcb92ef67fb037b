//! Gradient extrapolation for debiased representation learning.
//!
//! Training draws two class-balanced batches per step: a *biased* batch that
//! keeps the dataset's within-class attribute frequencies, and a *less biased*
//! batch pulled toward uniform attribute frequencies by a factor `c`. The
//! parameter update follows the extrapolated gradient
//! `g_lb + beta * (g_lb - g_b)`, which in expectation trains on the attribute
//! distribution `alpha + c * (beta + 1) * (1/A - alpha)`.
//!
//! Module map:
//!
//! * [`dataset`] grouped datasets, synthetic generation, CSV I/O, group statistics
//! * [`model`] linear / MLP classifiers with analytic gradients and SGD
//! * [`sampling`] biased, less-biased, group-balanced and SW batches
//! * [`extrapolation`] extrapolated loss/gradient, `p_ext`, bounds on `beta`
//! * [`pseudoattr`] pseudo-attributes from a biased auxiliary model
//! * [`metrics`] per-group accuracy, GBA, WGA, CBA and checkpoint selection
//! * [`harness`] configs, training loops, grid search, probes and reports

pub mod dataset;
pub mod error;
pub mod extrapolation;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod pseudoattr;
pub mod rng;
pub mod sampling;

mod serde_util;

pub use error::{GerneError, Result};
