//! Experiment orchestration on top of the core library: flat TOML
//! configuration with per-environment defaults, the training runner,
//! and the loss-by-evaluation ablation grid. The `muzero` binary is a
//! thin argument parser over these modules.

pub mod ablate;
pub mod config;
pub mod runner;
