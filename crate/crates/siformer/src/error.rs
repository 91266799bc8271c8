use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("loss is detached from the recorded computation")]
    DetachedLoss,

    #[error("all keys are masked out for query row {0}")]
    AllKeysMasked(usize),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("dataset schema violation: {0}")]
    Schema(String),

    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("no constraint entry for joint {joint} motion {motion}")]
    MissingConstraint { joint: String, motion: String },

    #[error("degenerate bone at joint {0}: zero length")]
    DegenerateBone(String),

    #[error("motion {motion} is not defined at joint {joint}")]
    MotionNotDefined { joint: String, motion: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
