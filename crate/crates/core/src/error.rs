use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range input (shapes, thresholds, settings).
    #[error("invalid input: {0}")]
    Input(String),

    /// Non-finite values appeared during a computation.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("matrix is not positive definite (smallest eigenvalue {eigenvalue:.6e})")]
    NotPositiveDefinite { eigenvalue: f64 },

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("collinear loadings: {0}")]
    Collinear(String),

    /// UNALCE re-fit requested on a fit whose low-rank part is empty.
    #[error("cannot un-shrink a rank-0 fit")]
    RankZeroRefit,

    #[error("no admissible fit in threshold grid: {0}")]
    NoAdmissibleFit(String),

    #[error("ground-truth generation failed: {0}")]
    Generation(String),

    #[error("study failed: {failed} of {total} replicates failed (first error: {first})")]
    Study {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// True for errors caused by the caller's data or arguments rather than
    /// by a numerical breakdown.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Input(_) | Error::Parse { .. } | Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
