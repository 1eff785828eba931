use thiserror::Error;

#[derive(Debug, Error)]
pub enum SalemError {
    /// Malformed scenario files, unreadable payloads, bad parameters.
    #[error("input error: {0}")]
    Input(String),

    /// Q(M) is empty; distinct from input errors so callers can widen M.
    #[error("empty window Q({m})")]
    EmptyWindow { m: f64 },

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// No element of the (finite) Mset passes the scale-selection test.
    #[error("Mset exhausted at level {level}: best margin {best_margin}")]
    MsetExhausted { level: usize, best_margin: f64 },

    #[error("box too large: {requested} entries exceeds cap {cap}")]
    BoxTooLarge { requested: u64, cap: u64 },

    /// A spectral grid does not cover the region a convolution needs.
    #[error("grid too small: radius {radius} available, {required} required")]
    GridTooSmall { radius: f64, required: f64 },

    #[error("empty intersection at level {level}")]
    EmptyIntersection { level: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SalemError>;
