//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    /// A vector with L2 norm at or below the global epsilon was asked to be
    /// normalized or used as a direction.
    #[error("vector norm is at or below the zero-norm threshold")]
    ZeroNorm,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A QR pivot column had norm at or below the rank threshold.
    #[error("rank-deficient matrix (pivot column norm {0:.3e})")]
    RankDeficient(f64),

    #[error("gradient contains a non-finite entry")]
    NonFiniteGradient,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input")]
    EmptyInput,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("separation target unreachable: min pairwise angle {achieved:.6} < target {target:.6}")]
    SeparationInfeasible { achieved: f64, target: f64 },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("missing method: {0}")]
    MissingMethod(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
