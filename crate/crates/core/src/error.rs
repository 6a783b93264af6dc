use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point has non-positive depth (Z = {0})")]
    NonPositiveDepth(f64),
    #[error("invalid {what}: {detail}")]
    InvalidArgument { what: &'static str, detail: String },
    #[error("angle count must be at least 2, got {0}")]
    BadCount(usize),
    #[error("sampling step must be positive, got {0}")]
    BadStep(f64),
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    BadChannels(usize),
    #[error("image {width}x{height} too small for a 3x3 stencil")]
    TooSmall { width: usize, height: usize },
    #[error("sample position ({x}, {y}) outside the {width}x{height} grid")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("image dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("vanishing point set is empty")]
    EmptyVpSet,
    #[error("vanishing point ({x}, {y}) outside the supported numerical range")]
    NumericalRange { x: f64, y: f64 },
    #[error("degenerate line pencil: normal equations are singular")]
    Degenerate,
    #[error("family {family} has {count} segment(s), at least 2 required")]
    TooFewSegments { family: usize, count: usize },
    #[error("no family yields a finite vanishing point")]
    AllInfinite,
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported schema version {0} (expected 1)")]
    SchemaVersion(i64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn from_json(err: serde_json::Error) -> Self {
        Error::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
