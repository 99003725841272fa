use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, DsrError>;

#[derive(Debug, thiserror::Error)]
pub enum DsrError {
    /// Operand shapes are incompatible for the named operator.
    #[error("{op}: incompatible shapes {shapes}")]
    Shape { op: &'static str, shapes: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("missing measure {0} with nonzero weight")]
    MissingMeasure(&'static str),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("all runs failed")]
    AllRunsFailed,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DsrError {
    pub(crate) fn shape(op: &'static str, shapes: impl Into<String>) -> Self {
        DsrError::Shape {
            op,
            shapes: shapes.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DsrError::InvalidArgument(msg.into())
    }
}
