use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    Shape {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// A configuration violates an invariant (dimension parity, empty level, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The caller asked for something outside the contract (bad label, empty dataset, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// `backward` was called on a node that is not a 1x1 scalar.
    #[error("backward requires a scalar loss node, got {shape}")]
    NonScalarLoss { shape: String },

    /// Training produced a NaN or infinite loss; aborting beats silently diverging.
    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: usize, value: f64 },

    /// The dataset manifest could not be parsed.
    #[error("malformed manifest {path} at line {line}: {msg}")]
    Manifest {
        path: String,
        line: usize,
        msg: String,
    },

    /// The blob file ends before the floats a manifest record promises.
    #[error(
        "truncated blob {path}: sample {sample} needs floats [{offset}, {end}) but only {available} are stored"
    )]
    TruncatedBlob {
        path: String,
        sample: usize,
        offset: usize,
        end: usize,
        available: usize,
    },

    /// A manifest record points past the end of the blob entirely.
    #[error(
        "manifest offset out of range: sample {sample} starts at {offset} but the blob holds {available} floats"
    )]
    OffsetOutOfRange {
        sample: usize,
        offset: usize,
        available: usize,
    },

    /// A checkpoint file is malformed or inconsistent with the current model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shape-mismatch constructor used by tape primitives.
    pub(crate) fn shape(op: &'static str, lhs: impl Into<String>, rhs: impl Into<String>) -> Self {
        Error::Shape {
            op,
            lhs: lhs.into(),
            rhs: rhs.into(),
        }
    }
}
