use thiserror::Error;

/// Errors raised by the numerical core.
///
/// The variants split into usage problems (bad arguments, malformed input)
/// and numerical failures (non-positive-definite matrices, tile rank
/// overflow, failed fits). The CLI maps the two groups to different exit
/// codes through [`Error::is_numerical`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: String },

    #[error("tile ({row}, {col}) needs rank {required} but tlr_max_rank is {max_rank}")]
    RankOverflow {
        row: usize,
        col: usize,
        required: usize,
        max_rank: usize,
    },

    #[error("implied covariance is rank deficient: {0}")]
    RankDeficient(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn not_pd(context: impl Into<String>) -> Self {
        Error::NotPositiveDefinite {
            context: context.into(),
        }
    }

    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::RankOverflow { .. }
                | Error::RankDeficient(_)
                | Error::FitFailure(_)
                | Error::Domain(_)
        )
    }

    /// Short machine-readable tag, used for failure rows in experiment output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Domain(_) => "domain",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::NotPositiveDefinite { .. } => "not-positive-definite",
            Error::RankOverflow { .. } => "rank-overflow",
            Error::RankDeficient(_) => "rank-deficient",
            Error::FitFailure(_) => "fit-failure",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
