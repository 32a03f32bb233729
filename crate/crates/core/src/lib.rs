//! Core library for a small, self-contained MuZero-style agent.
//!
//! The crate covers the full loop: toy environments, a hand-rolled
//! reverse-mode autodiff engine sized for dense networks, the three-part
//! latent model (representation, dynamics, prediction), pUCT tree search
//! with sampled actions for continuous control, target construction with
//! fresh-search recomputation of stored positions, a prioritized replay
//! buffer, the training step, evaluation, and dataset serialization.
//!
//! Everything is `f64` and deterministic: every source of randomness is a
//! seeded ChaCha8 stream, and reductions run in index order, so a run is
//! bitwise reproducible for a fixed seed on any platform.

pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod replay;
pub mod rng;
pub mod search;
pub mod targets;
pub mod train;

pub use error::{Error, Result};
