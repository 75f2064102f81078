use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("refinement level {level} exceeds the configured maximum {max}")]
    ResourceLimit { level: usize, max: usize },

    #[error("mesh quality: {0}")]
    MeshQuality(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("degenerate parameters: {0}")]
    DegenerateParameter(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("misuse: {0}")]
    Misuse(String),

    #[error("potential is singular at s = {s}")]
    Singularity { s: f64 },

    #[error("singular energy: nodal value {value} at node {node} is not inside (-1, 1)")]
    SingularEnergy { node: usize, value: f64 },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("right-hand side is not mean-free (mean = {mean:e})")]
    Compatibility { mean: f64 },

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error(
        "newton iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NewtonFailure { iterations: usize, residual: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("run aborted by observer at step {0}")]
    Aborted(usize),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}
