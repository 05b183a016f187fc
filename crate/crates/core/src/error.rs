use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("gradient for parameter `{0}` is not finite")]
    NonFiniteGradient(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("OFF format error: {0}")]
    Format(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("degenerate triangle (zero area)")]
    DegenerateTriangle,

    #[error("non-finite loss in patch {patch}")]
    NonFiniteLoss { patch: usize },

    #[error("training diverged at iteration {iteration}: loss {loss:e} (patch {patch})")]
    Diverged { iteration: usize, loss: f64, patch: usize },

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    /// True for failures of the numerics rather than of inputs or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}, expected \"SGCN\"")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("tensor `{name}` has shape {found:?}, config expects {expected:?}")]
    ShapeMismatch { name: String, found: Vec<usize>, expected: Vec<usize> },
    #[error("tensor `{0}` required by the config is missing")]
    MissingTensor(String),
    #[error("unexpected tensor `{0}` not described by the config")]
    UnexpectedTensor(String),
    #[error("invalid embedded config: {0}")]
    Config(String),
}
