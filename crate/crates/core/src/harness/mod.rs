//! Experiment harness: configuration, metrics, baseline policies, training
//! and evaluation loops, ablations and sweeps.

pub mod baselines;
pub mod config;
pub mod experiments;
pub mod metrics;
pub mod runner;

use std::path::PathBuf;

use thiserror::Error;

use crate::catalog::CatalogError;
use crate::embeddings::EmbeddingError;
use crate::policy::PolicyError;
use crate::simulator::SimError;

pub use config::{CatalogSource, ExperimentConfig};
pub use metrics::{compute_metrics, hdcg, EpisodeRecord, Metrics};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("no simulation pairs in the {0} split")]
    NoPairs(&'static str),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
