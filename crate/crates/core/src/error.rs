use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error at line {line}, key `{key}`: {message}")]
    Config { key: String, line: usize, message: String },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("no convergence after {iterations} iterations (best p_c = {best_pc}, nu = {best_nu}, residue = {best_value})")]
    NoConvergence { iterations: usize, best_pc: f64, best_nu: f64, best_value: f64 },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
