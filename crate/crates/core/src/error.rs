use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("point {0} lies outside the model domain")]
    OutsideDomain(String),

    #[error("coincident points: kernel is singular on the diagonal")]
    CoincidentPoints,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("mesh too coarse: cell size {cell} exceeds half the regularization radius {eps}")]
    MeshTooCoarse { cell: f64, eps: f64 },

    #[error("inadmissible insertions: {0}")]
    Inadmissible(String),

    #[error("zero-mode integral diverges (sbar = {sbar})")]
    Divergent { sbar: f64 },

    #[error("non-positive mass encountered; regularization is under-resolved")]
    ZeroMass,

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
