use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, TensorError>;

/// Errors emitted by tensor construction, operators, and optimizers.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorError {
    /// Data length does not match the product of the shape dimensions.
    DataLength { expected: usize, got: usize },
    /// Two operands have incompatible shapes.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A single-tensor shape constraint was violated.
    InvalidShape { op: &'static str, message: String },
    /// An argument outside the valid range (stride 0, p >= 1, ...).
    InvalidArgument { op: &'static str, message: String },
    /// backward() was called on a non-scalar tensor.
    NonScalarRoot { numel: usize },
    /// An optimizer stepped before any gradient was populated.
    MissingGradients,
    /// Checkpoint I/O failed.
    Io { message: String },
    /// A checkpoint payload was malformed or inconsistent with its header.
    Corrupt { message: String },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::DataLength { expected, got } => {
                write!(f, "data length mismatch: expected {expected}, got {got}")
            }
            TensorError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            TensorError::InvalidShape { op, message } => write!(f, "{op}: {message}"),
            TensorError::InvalidArgument { op, message } => write!(f, "{op}: {message}"),
            TensorError::NonScalarRoot { numel } => {
                write!(f, "backward requires a scalar root, got {numel} elements")
            }
            TensorError::MissingGradients => {
                write!(f, "optimizer step requires at least one populated gradient")
            }
            TensorError::Io { message } => write!(f, "i/o error: {message}"),
            TensorError::Corrupt { message } => write!(f, "corrupt checkpoint: {message}"),
        }
    }
}

impl std::error::Error for TensorError {}

impl From<std::io::Error> for TensorError {
    fn from(e: std::io::Error) -> Self {
        TensorError::Io {
            message: e.to_string(),
        }
    }
}
