//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or malformed config file.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// A dataset or record cannot be used as requested.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Commutation design cannot cover the requested angle with any coil.
    #[error("commutation design infeasible at rotor angle {angle} rad: {reason}")]
    Infeasible { angle: f64, reason: String },

    /// The data-collection campaign could not produce a usable dataset.
    #[error("campaign failed: {0}")]
    Campaign(String),

    /// Design matrix is numerically rank deficient.
    #[error(
        "design matrix rank {rank} is below the parameter count {n_theta} \
         (smallest retained singular value {smallest:e})"
    )]
    RankDeficient {
        rank: usize,
        n_theta: usize,
        smallest: f64,
    },

    /// A factorization or solve failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// File could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status for the CLI: 1 for configuration/validation
    /// problems, 2 for numerical or procedural failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Invalid(_) | Error::Dataset(_) | Error::Parse(_)
            | Error::Io(_) => 1,
            Error::Infeasible { .. }
            | Error::Campaign(_)
            | Error::RankDeficient { .. }
            | Error::Numerical(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
