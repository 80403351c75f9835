//! File formats, caches, subprocess hooks and command implementations around
//! [`race_core`].
//!
//! Stages hand off through files so expensive steps (parsing, embedding) are
//! cached and restartable:
//!
//! * `parse-cache`: documents to a tree cache (one tree record per line)
//! * `build-dataset`: raw or labelled records to a dataset directory with
//!   split manifests, statistics and an exclusion report
//! * `train` / `evaluate` / `predict`: dataset + trees + embeddings to a run
//!   directory with checkpoints and reports
//! * `analyze`: relation-frequency profiles and cross-class similarity

pub mod cache;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset_dir;
pub mod hart;
pub mod hooks;
pub mod jsonl;
pub mod trees;

use std::io;
use std::path::PathBuf;

use race_core::dataset::DatasetError;
use race_core::train::TrainError;

pub use race_core;

#[derive(Debug, thiserror::Error)]
pub enum RaceError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Format { path: PathBuf, line: usize, message: String },
    #[error("document {doc_id}: {message}")]
    Document { doc_id: String, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint does not match: {0}")]
    Mismatch(String),
    #[error("hook `{command}` failed: {message}")]
    Hook { command: String, message: String },
    #[error("missing input: {0}")]
    Missing(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl RaceError {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            RaceError::Io { .. } => "io",
            RaceError::Format { .. } => "format",
            RaceError::Document { .. } => "document",
            RaceError::Config(_) => "config",
            RaceError::Mismatch(_) => "config_mismatch",
            RaceError::Hook { .. } => "hook",
            RaceError::Missing(_) => "missing_input",
            RaceError::Dataset(_) => "dataset",
            RaceError::Train(TrainError::ConfigMismatch(_)) => "config_mismatch",
            RaceError::Train(_) => "train",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> RaceError {
        let path = path.into();
        move |source| RaceError::Io { path, source }
    }

    pub(crate) fn doc(doc_id: &str, message: impl ToString) -> RaceError {
        RaceError::Document { doc_id: doc_id.to_string(), message: message.to_string() }
    }
}

pub type Result<T, E = RaceError> = std::result::Result<T, E>;
