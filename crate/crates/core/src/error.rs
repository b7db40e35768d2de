use alloc::string::String;
use core::fmt;

/// Errors produced by the engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A sentence does not fit in the configured maximum length once the
    /// start and end markers are added.
    SentenceTooLong { len: usize, max_len: usize },
    /// Two tensors that must agree in shape do not.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// Two sequences that must have the same valid length do not.
    LengthMismatch { expected: usize, found: usize },
    /// A non-finite number where a finite one is required.
    NonFinite(&'static str),
    /// An empty sequence where at least one position is required.
    EmptySequence,
    /// An entity span or example violates the data invariants.
    InvalidData(String),
    /// A category name that is not one of the nine known categories.
    UnknownCategory(String),
    /// The category-class partition is not a partition.
    InvalidPartition(String),
    /// A configuration value is out of range.
    InvalidConfig(String),
    /// The training loss became non-finite.
    Diverged { epoch: usize, batch: usize },
    /// A sibling decode is missing when building an attention query.
    MissingSibling { class: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::SentenceTooLong { len, max_len } => write!(
                f,
                "sentence of length {len} does not fit max sequence length {max_len} (2 positions are reserved for markers)"
            ),
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "dimension mismatch in {what}: expected {expected}, found {found}"),
            Error::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::EmptySequence => f.write_str("sequence has no valid positions"),
            Error::InvalidData(msg) => write!(f, "invalid data: {msg}"),
            Error::UnknownCategory(name) => write!(f, "unknown entity category {name:?}"),
            Error::InvalidPartition(msg) => write!(f, "invalid category-class partition: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Diverged { epoch, batch } => {
                write!(f, "training diverged (non-finite loss) at epoch {epoch}, batch {batch}")
            }
            Error::MissingSibling { class } => {
                write!(f, "missing sibling decode for class {class}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
