use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported constellation size {0}: expected a power of four in 4..=256")]
    UnsupportedSize(usize),

    #[error("invalid constellation: {0}")]
    InvalidConstellation(String),

    #[error("degenerate constellation: mean power is zero")]
    DegenerateConstellation,

    #[error("quadrature node count {0} out of range 1..=128")]
    QuadratureNodes(usize),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
