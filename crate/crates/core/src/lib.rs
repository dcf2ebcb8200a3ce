//! Probabilistic imputation of daily EV-charging demand.
//!
//! The pipeline turns raw charging sessions into per-station daily series,
//! renders each (station, day) as a text prompt, embeds it, and trains a
//! variational network that reconstructs hidden days conditioned on the
//! embeddings of similar windows retrieved from a corpus.

pub mod baselines;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod ingest;
pub mod memory;
pub mod model;
pub mod pipeline;
pub mod prompting;
pub mod seeds;
pub mod training;

pub use error::{Error, Result};
