use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("record {index}: {reason}")]
    Record { index: u64, reason: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class {0} is already stored")]
    DuplicateClass(u32),

    #[error("class {0} is not stored")]
    UnknownClass(u32),

    #[error("covariance mode mismatch: store holds {store:?}, clusters are {given:?}")]
    ModeMismatch {
        store: crate::cluster::CovarianceMode,
        given: crate::cluster::CovarianceMode,
    },

    #[error("cannot remove {remove} of {total} stored clusters")]
    ReductionTooLarge { remove: usize, total: usize },

    #[error("budget of {budget} clusters cannot hold {classes} classes")]
    BudgetTooSmall { budget: usize, classes: usize },

    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("increment {increment}")]
    Increment {
        increment: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short stable identifier for machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Record { .. } => "record",
            Error::Format(_) => "format",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Empty(_) => "empty",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DuplicateClass(_) => "duplicate_class",
            Error::UnknownClass(_) => "unknown_class",
            Error::ModeMismatch { .. } => "mode_mismatch",
            Error::ReductionTooLarge { .. } => "reduction_too_large",
            Error::BudgetTooSmall { .. } => "budget_too_small",
            Error::NotPositiveSemidefinite { .. } => "not_psd",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::Diverged { .. } => "diverged",
            Error::Increment { source, .. } => source.kind(),
        }
    }
}
