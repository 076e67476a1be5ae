use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("only 1-D and 2-D problems are supported, got {0} axes")]
    UnsupportedDimension(usize),

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("background is nonzero at support index {index}")]
    BackgroundOnSupport { index: usize },

    #[error("intensity has a negative entry at index {index}")]
    NegativeIntensity { index: usize },

    #[error("intensity is not conjugate-symmetric (imaginary residue {residue:e})")]
    NotConjugateSymmetric { residue: f64 },

    #[error("reference quantity is zero: {0}")]
    ZeroReference(&'static str),

    #[error("iterate became non-finite at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("matrix is rank deficient (rank {rank} < {required})")]
    RankDeficient { rank: usize, required: usize },

    #[error("vector is outside the spectral ball (max |DFT| = {max_magnitude:e})")]
    OutsideSpectralBall { max_magnitude: f64 },

    #[error("support offset {offset:?} does not fit in grid {grid:?}")]
    OffsetOutOfRange {
        offset: Vec<usize>,
        grid: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by bad input data rather than bad usage.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidConfig(_) | Error::UnsupportedDimension(_))
    }
}
