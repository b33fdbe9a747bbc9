use core::fmt;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A numeric argument violated its documented range.
    InvalidRange(&'static str),
    /// A timestep index fell outside `0..=T`.
    IndexOutOfRange { t: usize, max: usize },
    /// Two tensors that must share a shape did not.
    ShapeMismatch,
    /// An input or intermediate value was NaN or infinite.
    NonFinite(&'static str),
    /// An operation that needs at least one sample got none.
    EmptyDataset,
    /// Sample dimension does not match what the model expects.
    DimensionMismatch,
    /// Iterative training produced a non-finite loss.
    Diverged(&'static str),
    /// A verifier precondition was not met; no bound is claimed.
    Precondition(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidRange(msg) => write!(f, "invalid range: {msg}"),
            Error::IndexOutOfRange { t, max } => {
                write!(f, "timestep {t} out of range 0..={max}")
            }
            Error::ShapeMismatch => write!(f, "tensor shape mismatch"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::EmptyDataset => write!(f, "empty dataset"),
            Error::DimensionMismatch => write!(f, "dimension mismatch"),
            Error::Diverged(what) => write!(f, "training diverged: {what}"),
            Error::Precondition(msg) => write!(f, "precondition violated: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
