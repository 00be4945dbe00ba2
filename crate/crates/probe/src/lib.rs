//! File formats, experiment pipeline, reports, SVG rendering and the command
//! line front end around `probe-core`.

pub mod cli;
pub mod config;
pub mod io;
pub mod pipeline;
pub mod render;
pub mod report;
pub mod selftest;

use std::path::Path;

use probe_core::dataset::DatasetError;
use probe_core::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: expected a {expected} file, found {found:?}")]
    Format { path: String, expected: &'static str, found: String },
    #[error("{path}: format version {found} is not supported (expected {expected})")]
    Version { path: String, expected: u32, found: u32 },
    #[error("{path}: truncated file ({detail})")]
    Truncated { path: String, detail: String },
    #[error("episode generation failed: {0}")]
    Generation(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Check(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Error {
        Error::Io { path: path.display().to_string(), source }
    }

    /// 1 for failed checks and validation, 2 for IO, format and config problems.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Check(_) | Error::Generation(_) => 1,
            Error::Model(ModelError::Diverged { .. } | ModelError::EmptyDataset) => 1,
            _ => 2,
        }
    }
}
