//! Experiment harness: configurations, simulated runs, metrics files,
//! checkpoints and the human-oracle session service.

pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod session;
