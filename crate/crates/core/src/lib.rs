//! Denoising trainer for implicit-feedback recommendation.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: loading interaction triplets, per-user splits, synthetic noise
//!   injection and the negative-sampling batch stream.
//! - [`model`]: a GMF backbone with hand-written gradients and Adam.
//! - [`robustloss`]: per-sample damped loss windows and the concentration
//!   lower bound used as the drop/relabel criterion.
//! - [`denoise`]: the double-correction training loop plus the Normal and
//!   T-CE baselines.
//! - [`eval`]: Recall@K / NDCG@K, flip precision and seed aggregation.
//! - [`harness`]: the planted-factor synthetic experiments.
//! - [`cli`]: the `dcf` experiment runner.

pub mod cli;
pub mod data;
pub mod denoise;
pub mod error;
pub mod eval;
pub mod harness;
pub mod model;
pub mod robustloss;

pub use error::{Error, Result};
