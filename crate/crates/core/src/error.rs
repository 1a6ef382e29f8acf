use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for the whole crate.
///
/// Dataset and checkpoint decoding keeps three distinct failure kinds
/// (malformed header, truncated blob, version mismatch) so callers can
/// tell a corrupt file from a stale one; each names the failing path.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and an op contract) disagree on shape.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An argument violates an op precondition (bad stride, label out of
    /// range, confidence outside [0,1], inconsistent model dimensions, ...).
    #[error("invalid argument for {op}: {detail}")]
    Precondition { op: &'static str, detail: String },

    /// A NaN or infinity appeared where a finite value is required.
    #[error("non-finite value encountered: {context}")]
    NonFinite { context: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Header or manifest that does not parse or is self-inconsistent.
    #[error("{path}: malformed header: {detail}")]
    Malformed { path: String, detail: String },

    /// A parameter or record blob shorter (or longer) than its header claims.
    #[error("{path}: truncated blob: expected {expected_bytes} bytes, found {actual_bytes}")]
    TruncatedBlob {
        path: String,
        expected_bytes: u64,
        actual_bytes: u64,
    },

    #[error("{path}: format version mismatch: expected {expected}, found {found}")]
    VersionMismatch {
        path: String,
        expected: u32,
        found: u32,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn precondition(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Precondition {
            op,
            detail: detail.into(),
        }
    }
}
