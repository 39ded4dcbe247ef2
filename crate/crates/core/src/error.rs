use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value appeared inside a simulation path.
    #[error("numeric fault at step {step}: {what}")]
    Numeric { step: usize, what: String },

    #[error("insufficient data: {0}")]
    Data(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("design failure: {0}")]
    Design(String),

    #[error("{aborted} of {total} replications aborted, above the ceiling {ceiling}")]
    AbortCeiling { aborted: usize, total: usize, ceiling: f64 },

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("failed to parse {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
