use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("responsibility row {row} has no probability mass")]
    DegenerateResponsibility { row: usize },

    #[error("component {component} has negligible responsibility mass ({mass:e})")]
    EmptyComponent { component: usize, mass: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("map is singular at the queried point")]
    SingularMap,

    #[error("integrand is not finite at sample {index}")]
    NonFiniteIntegrand { index: usize },

    #[error("numerical overflow in {location}")]
    NumericalOverflow { location: String },

    #[error("pass {pass}: {source}")]
    AtPass { pass: usize, source: Box<Error> },

    #[error("sample {index}: {source}")]
    AtSample { index: usize, source: Box<Error> },

    #[error("epoch {epoch}, batch {batch}: {source}")]
    AtBatch {
        epoch: usize,
        batch: usize,
        source: Box<Error>,
    },
}

impl Error {
    /// The underlying error with any location context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtPass { source, .. }
            | Error::AtSample { source, .. }
            | Error::AtBatch { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn at_pass(self, pass: usize) -> Error {
        Error::AtPass {
            pass,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_sample(self, index: usize) -> Error {
        Error::AtSample {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Error {
        Error::InvalidArgument(msg.into())
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension { expected, actual })
    }
}
