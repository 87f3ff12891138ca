use thiserror::Error;

/// Errors raised by grid construction, configuration and the numerical drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension must be at least 2, got {0}")]
    Dimension(usize),

    #[error("axis {axis}: degenerate extent [{lo}, {hi}]")]
    DegenerateExtent { axis: usize, lo: f64, hi: f64 },

    #[error("nodes per axis must be at least 3, got {0}")]
    TooFewNodes(usize),

    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },

    #[error("expression `{expr}` at column {column}: {message}")]
    Expression {
        expr: String,
        column: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("hypothesis check failed: {0}")]
    Hypothesis(String),

    #[error("excluded exponent case: {0}")]
    ExcludedCase(String),

    #[error("Luxemburg bracketing failed after {0} doublings")]
    Bracketing(usize),

    #[error("mountain-pass geometry not certified at norm {gamma:.6e}: eta = {eta:.6e}, smallest sampled energy {energy:.6e}")]
    Geometry {
        energy: f64,
        eta: f64,
        gamma: f64,
        /// Nodal values of the sampled function that violated the bound.
        counterexample: Vec<f64>,
    },

    #[error("no endpoint with negative energy after {0} doublings")]
    Endpoint(usize),

    #[error("negative part too large to clamp: |u-| = {0:.3e}")]
    ClampRejected(f64),

    #[error("config {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
