use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("empty mesh: spatial index needs at least one vertex")]
    EmptyMesh,

    #[error("vertex {0} has no incident face")]
    IsolatedVertex(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("tape is stale: recorded at parameter generation {recorded}, parameters are at {current}")]
    StaleTape { recorded: u64, current: u64 },

    #[error("non-finite gradient in tensor '{0}'")]
    NonFiniteGradient(String),

    #[error("non-finite loss at step {step} in term {term}")]
    NonFiniteLoss { step: usize, term: &'static str },

    #[error("no zero crossing of the field inside the sampled range")]
    NoZeroCrossing,

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("edit failed: {0}")]
    Edit(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("parse error in {what}: {msg}")]
    Parse { what: String, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image: {0}")]
    Image(String),
}

impl Error {
    /// Stable short identifier used by the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidMesh(_) => "invalid-mesh",
            Error::EmptyMesh => "empty-mesh",
            Error::IsolatedVertex(_) => "isolated-vertex",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::StaleTape { .. } => "stale-tape",
            Error::NonFiniteGradient(_) => "non-finite-gradient",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::NoZeroCrossing => "no-zero-crossing",
            Error::Degenerate(_) => "degenerate",
            Error::Edit(_) => "edit",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config { .. } => "config",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Image(_) => "image",
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
