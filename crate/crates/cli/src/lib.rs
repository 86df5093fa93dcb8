//! Library half of the `idlive` binary: run configuration, checkpoint
//! persistence, and the subcommand implementations.

use std::path::PathBuf;

pub mod checkpoint;
pub mod commands;
pub mod config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] idlive_core::Error),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("config error: {0}")]
    ConfigInvalid(String),

    #[error("gallery was built by a different model (parameter digest mismatch); re-run calibrate")]
    GalleryModelMismatch,
}
