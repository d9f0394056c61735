use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("cannot broadcast {from:?} to {to:?}")]
    Broadcast { from: Vec<usize>, to: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{op}: expected {expected} input channels, got {got}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: spatial size {size} is not divisible by {factor}")]
    Indivisible {
        op: &'static str,
        size: usize,
        factor: usize,
    },
    #[error("scale {scale}: spatial size {size} is not divisible by {factor}")]
    Divisibility {
        scale: usize,
        size: usize,
        factor: usize,
    },
    #[error("batch norm in training mode needs batch size >= 2, got {0}")]
    BatchTooSmall(usize),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidRate(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },
    #[error("rotation by 90 or 270 degrees needs a square patch, got {height}x{width}")]
    NonSquare { height: usize, width: usize },
    #[error("unknown parameter names: {0:?}")]
    UnknownParams(Vec<String>),
    #[error("missing parameter names: {0:?}")]
    MissingParams(Vec<String>),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
