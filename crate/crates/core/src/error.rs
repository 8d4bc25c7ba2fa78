//! Crate-wide error type.

use std::fmt;

/// Errors produced by the pipeline stages.
#[derive(Debug)]
pub enum Error {
    /// IDX file magic number is not the expected one for the record kind.
    BadMagic { expected: u32, found: u32 },
    /// File ended before the declared record count was read.
    TruncatedFile { expected: usize, found: usize },
    /// Declared dimensions are inconsistent with the byte count or with each other.
    DimensionMismatch(String),
    /// val_frac + test_frac outside [0, 1).
    FractionOutOfRange { val_frac: f64, test_frac: f64 },
    /// DoG sigma must be strictly positive.
    NonPositiveSigma,
    /// Image smaller than the filter support.
    ImageTooSmall { height: usize, width: usize },
    /// Tensor shapes disagree.
    ShapeMismatch(String),
    /// Layer geometry (kernel/stride/input size) does not line up.
    GeometryMismatch(String),
    /// A training stream yielded no images although the schedule asked for some.
    EmptyStream,
    /// Paired slices have different lengths.
    LengthMismatch { left: usize, right: usize },
    /// Invalid network dimensions.
    BadDims(String),
    /// Vector/matrix dimensions disagree.
    DimMismatch(String),
    /// Backprop called with an empty batch.
    EmptyBatch,
    /// Label index exceeds the class count.
    LabelOutOfRange { label: usize, num_classes: usize },
    /// Evaluation called on an empty set.
    EmptySet,
    /// Invalid training configuration.
    ConfigInvalid(String),
    /// Weight trace has no snapshots to render.
    EmptyTrace,
    /// A binary container is malformed or has the wrong magic/version.
    Format(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::BadMagic { expected, found } => {
                write!(f, "bad IDX magic: expected {expected:#010x}, found {found:#010x}")
            }
            Error::TruncatedFile { expected, found } => {
                write!(f, "truncated file: expected {expected} bytes, found {found}")
            }
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::FractionOutOfRange { val_frac, test_frac } => write!(
                f,
                "val_frac + test_frac must lie in [0, 1): got {val_frac} + {test_frac}"
            ),
            Error::NonPositiveSigma => write!(f, "DoG sigma must be > 0"),
            Error::ImageTooSmall { height, width } => {
                write!(f, "image {height}x{width} is smaller than the 7x7 filter support")
            }
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::GeometryMismatch(msg) => write!(f, "geometry mismatch: {msg}"),
            Error::EmptyStream => write!(f, "training stream yielded no images"),
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::BadDims(msg) => write!(f, "bad dimensions: {msg}"),
            Error::DimMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::EmptyBatch => write!(f, "empty batch"),
            Error::LabelOutOfRange { label, num_classes } => {
                write!(f, "label {label} out of range for {num_classes} classes")
            }
            Error::EmptySet => write!(f, "empty evaluation set"),
            Error::ConfigInvalid(msg) => write!(f, "invalid config: {msg}"),
            Error::EmptyTrace => write!(f, "weight trace has no snapshots"),
            Error::Format(msg) => write!(f, "container format error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
