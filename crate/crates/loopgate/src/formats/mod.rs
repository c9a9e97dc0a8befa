//! On-disk formats: images, control logs, trajectories, the descriptor cache,
//! CSV tables and the dataset manifest.

pub mod cache;
pub mod controls;
pub mod images;
pub mod manifest;
pub mod tables;
pub mod trajectory;

use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
}

impl FormatError {
    pub fn io(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
        move |source| FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        FormatError::Parse {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    pub fn invalid(path: &Path, message: impl Into<String>) -> Self {
        FormatError::Invalid {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, FormatError>;

/// Whitespace-separated numeric fields of a text line; `#` starts a comment.
pub(crate) fn numeric_fields(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>> {
    let body = line.split('#').next().unwrap_or("");
    body.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| FormatError::parse(path, line_no, format!("not a number: `{tok}`")))
        })
        .collect()
}
