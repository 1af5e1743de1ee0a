use thiserror::Error;

/// Unified error type for the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by `{op}` at tape node {node}")]
    NonFinite { op: &'static str, node: usize },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("parameter `{name}` has no gradient")]
    MissingGradient { name: String },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("csv error at {path}:{line}: {msg}")]
    Csv {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("degenerate landscape graph: {0}")]
    DegenerateGraph(String),

    #[error("integration error: {0}")]
    Integration(String),

    #[error("training diverged at epoch {epoch} ({term}): {msg}")]
    Diverged {
        epoch: usize,
        term: &'static str,
        msg: String,
    },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable kind tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::NonScalarLoss { .. } => "non_scalar_loss",
            Error::MissingGradient { .. } => "missing_gradient",
            Error::InvalidTensor(_) => "invalid_tensor",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Csv { .. } => "csv",
            Error::Simulation(_) => "simulation",
            Error::DegenerateGraph(_) => "degenerate_graph",
            Error::Integration(_) => "integration",
            Error::Diverged { .. } => "diverged",
            Error::Evaluation(_) => "evaluation",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
