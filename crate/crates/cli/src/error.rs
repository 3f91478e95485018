use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failures that stop a command before it produces its main result.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}:{line}:{column}: parse error: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Model(#[from] slipgait::Error),
}

impl CliError {
    pub(crate) fn from_json(path: &Path, e: &serde_json::Error) -> Self {
        use serde_json::error::Category;
        match e.classify() {
            Category::Syntax | Category::Eof => Self::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            },
            Category::Io => Self::Io { path: path.to_path_buf(), source: std::io::Error::other(e.to_string()) },
            // Type mismatches and failed invariants inside embedded types.
            Category::Data => Self::Validation(strip_position(&e.to_string())),
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> Exit {
        Exit::InvalidInput
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

/// Process exit status, one per outcome category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    /// Unreadable, malformed or invalid input, IO failure, infeasible targets.
    InvalidInput = 1,
    /// A requested run lost the gait before the horizon.
    GaitFailure = 2,
    /// Fixed-point search did not converge.
    NoFixedPoint = 3,
    /// Fixed point found but not stable.
    Unstable = 4,
}

impl Exit {
    pub fn code(self) -> u8 {
        self as u8
    }
}
