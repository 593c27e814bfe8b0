use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RaclError>;

#[derive(Error, Debug)]
pub enum RaclError {
    #[error("{path}: file not found")]
    MissingFile { path: PathBuf },

    #[error("{path}: malformed WAV header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("{path}: unsupported WAV encoding ({bits}-bit {kind})")]
    UnsupportedEncoding {
        path: PathBuf,
        kind: &'static str,
        bits: u16,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty input")]
    EmptyInput,

    #[error("degenerate power (signal {signal}, interferer {noise})")]
    DegeneratePower { signal: f64, noise: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("EER undefined: {0}")]
    UndefinedEer(String),

    #[error("{path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("artifact {artifact} was produced under config {found}, current config is {expected}")]
    ConfigMismatch {
        artifact: String,
        expected: String,
        found: String,
    },
}

impl RaclError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RaclError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied configuration rather than
    /// runtime conditions.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            RaclError::Config(_) | RaclError::ConfigMismatch { .. }
        )
    }
}
