use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("missing input `{0}`")]
    MissingInput(String),

    #[error("no forward cache for this graph; call evaluate first")]
    MissingForward,

    #[error("stale forward cache: parameters changed since the forward pass")]
    StaleCache,

    #[error("finite-difference probe of `{name}`[{index}] produced a non-finite value")]
    NonFiniteProbe { name: String, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite loss at step {step} (L_dist={dist}, L_cls_hr={cls_hr}, L_cls_lr={cls_lr}, resolutions {resolutions})")]
    NonFiniteLoss {
        step: u64,
        dist: f64,
        cls_hr: f64,
        cls_lr: f64,
        resolutions: String,
    },

    #[error("non-finite gradient at resolution {0} px")]
    NonFiniteGradient(u32),

    #[error("degenerate covariance: rank below {0}")]
    DegenerateCovariance(usize),

    #[error("config [{section}] {key}: {message}")]
    Config {
        section: String,
        key: String,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {message}")]
    Path { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn path(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::Path {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
