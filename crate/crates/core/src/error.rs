use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate triangle {index}: {nodes:?}")]
    DegenerateTriangle { index: usize, nodes: [usize; 3] },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("body node {body} coincides with heart node {heart}")]
    CoincidentNodes { body: usize, heart: usize },

    #[error("length mismatch in {context}: expected {expected}, got {actual}")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("index {index} out of range for {context} (len {len})")]
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("coupling term singular at node {node} (u + mu2 = 0)")]
    Singularity { node: usize },

    #[error("non-finite value in {context} at {location}")]
    NonFinite {
        context: &'static str,
        location: String,
    },

    #[error("training diverged at iteration {iteration} (loss history tail: {history:?})")]
    Diverged { iteration: usize, history: Vec<f64> },

    #[error("parameter vector is not a first-order optimum: gradient norm {grad_norm:e} > {tol:e}")]
    NotOptimal { grad_norm: f64, tol: f64 },

    #[error("no trusted nodes at threshold tau = {tau}; lower tau to obtain imputation anchors")]
    NoTrustedNodes { tau: f64 },

    #[error("graph is disconnected; unreachable nodes: {nodes:?}")]
    Disconnected { nodes: Vec<usize> },

    #[error("relative error undefined: ground truth has zero norm")]
    ZeroReference,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singularity { .. }
                | Error::NonFinite { .. }
                | Error::Diverged { .. }
                | Error::NotOptimal { .. }
        )
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            context,
            expected,
            actual,
        })
    }
}
