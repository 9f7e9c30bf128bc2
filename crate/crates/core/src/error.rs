use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("host speed {speed:.3} m/s is below the critical speed {min:.3} m/s")]
    BelowCriticalSpeed { speed: f32, min: f32 },

    #[error("unusable dataset: {0}")]
    UnusableDataset(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Rejections raised while decoding one of the binary file formats.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes")]
    BadMagic,

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("file truncated or oversized: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },

    #[error("model kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },

    #[error("label file has {labels} frames but the drive has {drive}")]
    FrameCountMismatch { labels: usize, drive: usize },

    #[error("invalid field: {0}")]
    Invalid(String),
}

impl Error {
    /// Short machine-parseable category used by the CLI on stderr.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non-finite",
            Error::BelowCriticalSpeed { .. } => "below-critical-speed",
            Error::UnusableDataset(_) => "unusable-dataset",
            Error::Divergence(_) => "divergence",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code: 2 usage, 3 data error, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::NonFinite(_) | Error::Divergence(_) => 4,
            _ => 3,
        }
    }
}
