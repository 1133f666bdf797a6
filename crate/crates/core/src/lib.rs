//! Uncertainty-driven online grasp learning for bin picking.
//!
//! The crate bundles a deterministic synthetic bin simulator ([`sim`]), a
//! small per-pixel MLP kernel ([`net`]), ensemble critics with mean-variance
//! ([`critic::mv`]) and quantile ([`critic::qr`]) heads, the UCB pixel
//! explorer ([`explore`]), the offline/online training pipeline
//! ([`pipeline`]) and the experiment harness ([`harness`]).

pub mod error;
pub mod gridio;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub mod net;
pub mod critic;
pub mod actor;
pub mod explore;
pub mod agent;
pub mod pipeline;
pub mod harness;
