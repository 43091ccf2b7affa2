use thiserror::Error;

/// Errors produced anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("completion error: {0}")]
    Completion(String),
    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("solver did not converge after {iterations} iterations: {residuals}")]
    Solver { iterations: usize, residuals: String },
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(what: &str, expected: usize, got: usize) -> Error {
    Error::Shape(format!("{what}: expected {expected}, got {got}"))
}
