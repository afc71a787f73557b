use thiserror::Error;

/// Errors produced by the solvers and file readers in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("evaluation error at node {node}: {reason}")]
    Evaluation { node: usize, reason: String },

    #[error("evaluation error at time index {time_index}: {source}")]
    PathEvaluation {
        time_index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("Newton failed after {iterations} iterations (last residual {residual:.3e})")]
    NewtonFailure { iterations: usize, residual: f64 },

    #[error("singular linear system: {0}")]
    Singular(&'static str),

    #[error("spectral failure: {0}")]
    Spectral(String),

    #[error("degenerate spectrum: eigenvalue {re:.3e}{im:+.3e}i on the imaginary axis")]
    DegenerateSpectrum { re: f64, im: f64 },

    #[error("projection mismatch: {0}")]
    ProjectionMismatch(String),

    #[error("no stable directions at target steady state")]
    NoPath,

    #[error("branch switch failed: {0}")]
    BranchSwitch(String),

    #[error("boundary value problem failed after {iterations} iterations (residual {residual:.3e})")]
    PathFailure { iterations: usize, residual: f64 },

    #[error("no progress: {0}")]
    NoProgress(String),

    #[error("undefined: {0}")]
    Undefined(&'static str),

    #[error("parse error in {file}: {reason}")]
    Parse { file: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected,
            got,
            context,
        })
    }
}
