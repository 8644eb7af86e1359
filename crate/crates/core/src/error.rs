use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate projection at grid point {index} (|d'| = {denom:e})")]
    DegenerateProjection { index: usize, denom: f64 },
    #[error("decode error: {0}")]
    Decode(String),
    #[error("framing error: {0}")]
    Framing(String),
    #[error("training diverged at epoch {epoch}, step {step}; last finite components: {last_finite}")]
    Divergence {
        epoch: usize,
        step: usize,
        last_finite: String,
    },
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
