//! Data ingestion, synthetic pairs, metrics, evaluation, plotting, configuration and the CLI.

pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod metrics;
pub mod plot;
pub mod synth;
