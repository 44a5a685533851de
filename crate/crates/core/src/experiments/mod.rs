//! Study orchestration: configuration, scheduling, result storage, statistics
//! and report rendering.

pub mod config;
pub mod elimination;
pub mod report;
pub mod runner;
pub mod source;
pub mod stats;
pub mod store;

pub use config::{load_config, ArchPair, ExperimentConfig, Method, Study};
pub use elimination::{backward_eliminate, electrode_importance, Elimination, Importance};
pub use runner::{Job, Runner};
pub use source::{container_path, prepare, DataSource};
pub use stats::{wilcoxon_rank_sum, wilcoxon_signed_rank, TestResult};
pub use report::{render_report, ReportOptions};
pub use store::{summarize, ResultsStore, SummaryRow};

use thiserror::Error;

use crate::data::DataError;
use crate::models::ModelError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("results store: {0}")]
    Store(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("elimination step {step} over [{channels}]: {source}")]
    Elimination {
        step: usize,
        channels: String,
        #[source]
        source: Box<ExperimentError>,
    },
    #[error("scheduling: {0}")]
    Scheduling(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;
