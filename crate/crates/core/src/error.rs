use thiserror::Error;

pub type Result<T, E = KaaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KaaError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("shape mismatch at KAN layer {layer}: expects width {expected}, got {got}")]
    LayerShape {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite gradient for parameter `{name}`")]
    Divergence { name: String },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Training { epoch: usize, loss: f64 },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("size limit: {0}")]
    Size(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error("theorem check failed: {0}")]
    TheoremCheck(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl KaaError {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        KaaError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
