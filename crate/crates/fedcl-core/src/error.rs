//! Error type shared by the core modules.

use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or matrix dimension did not match what the operation expects.
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    /// A loss or parameter became NaN/inf. `sample` is the offending sample
    /// index when the failure is attributable to one.
    NonFinite {
        context: &'static str,
        sample: Option<usize>,
    },
    /// An operation requiring data was handed an empty collection.
    Empty(&'static str),
    /// A class label outside `[0, num_classes)`.
    LabelOutOfRange { label: usize, num_classes: usize },
    /// Invalid configuration value; the message names the field.
    InvalidConfig(String),
    /// A protocol rule of the orchestrator was violated.
    Protocol(&'static str),
    /// Aggregation did not receive one parameter vector per client.
    MissingClient { expected: usize, actual: usize },
    /// Checkpoint decoding: leading magic bytes are wrong.
    WireBadMagic,
    /// Checkpoint decoding: buffer ended inside a field.
    WireTruncated,
    /// Checkpoint decoding: record was written by an unsupported version.
    WireUnsupportedVersion(u16),
    /// Checkpoint decoding: structurally invalid payload.
    WireMalformed(&'static str),
    /// An error annotated with orchestration context (round, client, step).
    Context { context: String, source: Box<Error> },
}

impl Error {
    /// Wraps `self` with a human-readable orchestration context.
    pub fn with_context(self, context: String) -> Error {
        Error::Context {
            context,
            source: Box::new(self),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape {
                context,
                expected,
                actual,
            } => write!(f, "{context}: dimension mismatch (expected {expected}, got {actual})"),
            Error::NonFinite { context, sample } => match sample {
                Some(i) => write!(f, "{context}: non-finite value at sample {i}"),
                None => write!(f, "{context}: non-finite value"),
            },
            Error::Empty(what) => write!(f, "{what}: empty input"),
            Error::LabelOutOfRange { label, num_classes } => {
                write!(f, "label {label} out of range for {num_classes} classes")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::Protocol(msg) => write!(f, "protocol violation: {msg}"),
            Error::MissingClient { expected, actual } => write!(
                f,
                "aggregation expects {expected} parameter vectors, got {actual}"
            ),
            Error::WireBadMagic => write!(f, "checkpoint: bad magic"),
            Error::WireTruncated => write!(f, "checkpoint: truncated record"),
            Error::WireUnsupportedVersion(v) => write!(f, "checkpoint: unsupported version {v}"),
            Error::WireMalformed(msg) => write!(f, "checkpoint: malformed record: {msg}"),
            Error::Context { context, source } => write!(f, "{context}: {source}"),
        }
    }
}

impl core::error::Error for Error {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        match self {
            Error::Context { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
