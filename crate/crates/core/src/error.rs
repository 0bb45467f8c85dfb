use std::io;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Variants are grouped so the CLI can map them onto stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("frequency {freq_hz} Hz aliases at sample rate {sample_rate_hz} Hz")]
    Aliasing { freq_hz: f64, sample_rate_hz: f64 },

    #[error("patch size {patch_size} does not divide image {dimension} ({extent})")]
    NotDivisible {
        patch_size: usize,
        dimension: &'static str,
        extent: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("truncated frame: expected {expected} payload bytes, got {got}")]
    TruncatedFrame { expected: usize, got: usize },

    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("latency budget violated: {0}")]
    Budget(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }

    /// Process exit code used by the CLI for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::NotDivisible { .. } => 2,
            Error::Io(_) | Error::Format { .. } => 3,
            Error::Protocol(_) | Error::TruncatedFrame { .. } => 4,
            Error::Budget(_) => 5,
            Error::Aliasing { .. } | Error::Shape(_) | Error::NonFinite(_) => 1,
        }
    }

    /// Short stable tag for machine-parsable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Aliasing { .. } => "aliasing",
            Error::NotDivisible { .. } => "not_divisible",
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::Format { .. } => "format",
            Error::Protocol(_) => "protocol",
            Error::TruncatedFrame { .. } => "truncated_frame",
            Error::Config(_) => "config",
            Error::Budget(_) => "budget",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
