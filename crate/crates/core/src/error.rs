use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape {0:?} has a zero extent")]
    ZeroExtent(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss does not depend on any tensor that requires grad")]
    DetachedLoss,
    #[error("function returned different values for identical inputs")]
    NonDeterministic,
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("batch norm in train mode needs at least 2 values per channel, got {0}")]
    BatchTooSmall(usize),
    #[error("window {window:?} does not fit input {input:?} with padding {padding}")]
    WindowOverrun {
        window: (usize, usize),
        input: (usize, usize),
        padding: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model has {model} classes but dataset has {dataset}")]
    ClassCountMismatch { model: usize, dataset: usize },
    #[error("training diverged at epoch {epoch} (iteration {iteration})")]
    Diverged { epoch: usize, iteration: usize },
    #[error("box does not intersect the image")]
    EmptyIntersection,
    #[error("could not find a crop containing the box after {0} attempts")]
    DegenerateCrop(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
