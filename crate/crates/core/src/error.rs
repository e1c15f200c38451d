use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Index or point outside the domain, or a domain that violates its invariants.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-manifold mesh: edges shared by more than two faces: {edges:?}")]
    NonManifold { edges: Vec<(usize, usize)> },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("vertex {0} has an empty neighborhood")]
    DegeneratePatch(usize),

    #[error("degenerate triangle geometry")]
    DegenerateGeometry,

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    /// The local solver has nothing upwind to estimate from. The marching
    /// engine treats this as a no-op.
    #[error("local solver not ready: no usable visited neighbor")]
    NotReady,

    #[error("local solver fault at point {point}: estimate {value}")]
    SolverFault { point: usize, value: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("invalid binary format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
