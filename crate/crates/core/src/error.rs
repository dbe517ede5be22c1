use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Layer parameters disagree with the tensor they are applied to.
    InvalidSpec(String),
    /// Input data does not match the shape the model was built for.
    InvalidInput(String),
    InvalidCrop(String),
    /// A microclassifier spec failed validation; `field` names the offending field.
    SpecRejected {
        field: &'static str,
        message: String,
    },
    /// Frames were pushed to a windowed classifier out of order.
    Sequencing {
        last: u64,
        got: u64,
    },
    DegenerateData(String),
    InvariantViolation(String),
    NotFound(String),
    UndefinedMetric(&'static str),
    Generation(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidSpec(m) => write!(f, "invalid spec: {m}"),
            Error::InvalidInput(m) => write!(f, "invalid input: {m}"),
            Error::InvalidCrop(m) => write!(f, "invalid crop: {m}"),
            Error::SpecRejected { field, message } => {
                write!(f, "spec rejected ({field}): {message}")
            }
            Error::Sequencing { last, got } => {
                write!(f, "out-of-order frame: got {got} after {last}")
            }
            Error::DegenerateData(m) => write!(f, "degenerate data: {m}"),
            Error::InvariantViolation(m) => write!(f, "invariant violated: {m}"),
            Error::NotFound(m) => write!(f, "not found: {m}"),
            Error::UndefinedMetric(m) => write!(f, "undefined metric: {m}"),
            Error::Generation(m) => write!(f, "generation failed: {m}"),
        }
    }
}

impl core::error::Error for Error {}
