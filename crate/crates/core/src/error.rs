use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh parameter: {0}")]
    InvalidMesh(String),

    #[error("fields live on different meshes")]
    MeshMismatch,

    #[error("field length {got} does not match the expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("coefficient bound violated at node {node}: {detail}")]
    CoefficientBound { node: usize, detail: String },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("linear solver broke down: {0}")]
    Breakdown(String),

    #[error("degenerate transport problem: {0}")]
    DegenerateTransport(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("iteration diverged at step {iteration}: residual grew from {from:.3e} to {to:.3e}")]
    Diverged { iteration: usize, from: f64, to: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown phantom `{0}`")]
    UnknownPhantom(String),

    #[error("{path}: {detail}")]
    Format { path: String, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Error {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerical solvers (as opposed to bad input).
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::NotConverged { .. }
            | Error::Breakdown(_)
            | Error::DegenerateTransport(_)
            | Error::Diverged { .. } => true,
            Error::AtIteration { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}
