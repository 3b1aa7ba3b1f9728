use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not satisfy an operation's constraints.
    Shape { op: &'static str, detail: String },
    /// A primitive produced NaN or infinity.
    NonFinite { op: &'static str },
    /// A precondition of the call itself was violated.
    Contract(String),
    /// Invalid model or run configuration; `field` names the offending entry.
    Config { field: String, reason: String },
    /// Eval-mode batch norm on statistics that were never estimated.
    UninitializedStats(String),
    /// Optimizer received a NaN or infinite gradient for the named parameter.
    NonFiniteGradient(String),
    /// A function expected to be deterministic returned different values.
    NonDeterministic(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "dimension error in {op}: {detail}"),
            Error::NonFinite { op } => write!(f, "non-finite value produced by {op}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Config { field, reason } => write!(f, "invalid configuration `{field}`: {reason}"),
            Error::UninitializedStats(name) => {
                write!(f, "batch norm `{name}` used in eval mode before any training step")
            }
            Error::NonFiniteGradient(name) => write!(f, "non-finite gradient for parameter `{name}`"),
            Error::NonDeterministic(msg) => write!(f, "check invalid, function is not deterministic: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
