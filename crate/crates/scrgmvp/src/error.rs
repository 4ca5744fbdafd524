use thiserror::Error;

/// Errors surfaced by model construction, estimation, and experiment plumbing.
#[derive(Debug, Error)]
pub enum Error {
    /// A model or configuration invariant was violated at construction.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A precision form produced a zero or non-finite budget normalizer.
    #[error("degenerate precision: {0}")]
    DegeneratePrecision(String),

    /// Linear solve against a singular sample covariance.
    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    /// Input matrix is not symmetric within tolerance.
    #[error("matrix is not symmetric (max asymmetry {max_asym:.3e})")]
    NotSymmetric { max_asym: f64 },

    /// Sample eigenvalue inside the Marchenko-Pastur bulk; the spike is not
    /// identifiable.
    #[error("eigenvalue {value} lies inside the spectral bulk; spike not identifiable")]
    BulkEigenvalue { value: f64 },

    /// Too few observations or too many retained spikes.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Configuration file or flag error.
    #[error("config error: {0}")]
    Config(String),

    /// Input data file error (missing file, malformed CSV, bad values).
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
