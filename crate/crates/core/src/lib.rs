//! Distributed nonlinear transform coding of correlated image pairs.

pub mod error;
pub mod grid;
pub mod harness;
pub mod jscc;
pub mod model;
pub mod nn;
pub mod alignment;
pub mod channel;
pub mod checkpoint;
pub mod coding;
pub mod entropy;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
