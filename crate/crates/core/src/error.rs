use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("singular network element: {0}")]
    Singular(String),

    #[error("steady-state initialization failed at bus {bus}: mismatch {mismatch:.3e} pu ({reason})")]
    Initialization { bus: usize, mismatch: f64, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("Newton iteration did not converge in {iterations} iterations (last increment norm {last_norm:.3e})")]
    Convergence { iterations: usize, last_norm: f64 },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("not observable: {0}")]
    NotObservable(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (non-convergence, singular solves) as
    /// opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Convergence { .. } | Error::LinearSolve(_) | Error::Initialization { .. } => true,
            Error::AtStep { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Error {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// The step index of the innermost annotated failure, if any.
    pub fn step(&self) -> Option<usize> {
        match self {
            Error::AtStep { step, .. } => Some(*step),
            _ => None,
        }
    }
}
