use alloc::string::String;
use core::fmt;

/// Errors raised by the calibration core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two shapes that must agree do not.
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    /// A value that must be finite is NaN or infinite.
    NonFinite(&'static str),
    /// Head inversion produced a non-finite iterate.
    InversionDiverged { step: usize },
    /// The calibrator window does not yet hold `L` entries.
    WindowUnderfull { have: usize, need: usize },
    /// An operation needs at least one element.
    Empty(&'static str),
    /// A configuration value is outside its admissible range.
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                context,
                expected,
                found,
            } => write!(f, "{context}: expected dimension {expected}, found {found}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::InversionDiverged { step } => {
                write!(
                    f,
                    "head inversion diverged at step {step}; retry with a smaller step size"
                )
            }
            Error::WindowUnderfull { have, need } => {
                write!(
                    f,
                    "calibration window holds {have} of {need} entries; warm-up not finished"
                )
            }
            Error::Empty(what) => write!(f, "{what} is empty"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}

pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
