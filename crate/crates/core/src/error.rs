use std::path::PathBuf;

/// Errors produced anywhere in the identification and control pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what} out of range: {bound}")]
    Range { what: &'static str, bound: String },

    #[error("insufficient data for {what}: need at least {needed} samples, have {available}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("closed loop is unstable (spectral radius {spectral_radius:.6})")]
    UnstableLoop { spectral_radius: f64 },

    #[error("{what} is rank deficient (rank {rank} of {expected}); excitation is insufficient")]
    RankDeficient {
        what: &'static str,
        rank: usize,
        expected: usize,
    },

    #[error("{which} is near-singular (smallest eigenvalue {min_eig:e} below floor {floor:e})")]
    SingularCovariance {
        which: &'static str,
        min_eig: f64,
        floor: f64,
    },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("zero signal power: the noise-free output is identically zero")]
    ZeroSignalPower,

    #[error("bias/variance needs at least {needed} runs, got {got}")]
    TooFewRuns { needed: usize, got: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config file error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(
        context: &'static str,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
