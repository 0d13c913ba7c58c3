use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Evaluation at a kernel singularity.
    #[error("singularity: {0}")]
    Singularity(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("unsupported dimension {dim} for {what}")]
    UnsupportedDimension { dim: usize, what: String },

    /// Quadrature or iteration did not reach the requested accuracy.
    #[error("{what}: achieved error {achieved:.3e} exceeds tolerance {requested:.3e}")]
    Accuracy {
        what: String,
        achieved: f64,
        requested: f64,
    },

    #[error("mesh has no cells")]
    EmptyMesh,

    #[error("numeric failure in {what}: {detail}")]
    Numeric { what: String, detail: String },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn param(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
