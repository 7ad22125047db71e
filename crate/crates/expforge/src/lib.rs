//! Zero-rate error exponents for AWGN channels with and without noisy feedback.
//!
//! The crate has five layers:
//!
//! - [`geometry`]: simplex codebooks and the decision regions built on them.
//! - [`analytic`]: closed-form exponents, two-way regions and Pareto sweeps.
//! - [`schemes`]: per-trial encoder/decoder state machines.
//! - [`engine`]: batched, seekable Monte Carlo with Wilson intervals.
//! - [`oracle`]: Gaussian tails, exact small-`m` error probabilities and
//!   the per-event bounds used to cross-check simulations.
//!
//! [`validate`] bundles the end-to-end checks that the CLI exposes.
//!
//! Message indices are zero-based throughout.

pub mod analytic;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod oracle;
pub mod schemes;
pub mod validate;

pub use error::{Error, Result};
