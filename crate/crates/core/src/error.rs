use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite loss at epoch {epoch}, step {step}; parameters restored to {}", describe_last_good(.last_good_epoch, .last_good_checkpoint))]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        last_good_epoch: Option<usize>,
        last_good_checkpoint: Option<PathBuf>,
    },

    #[error("depth {depth}: {source}")]
    Sweep {
        depth: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn describe_last_good(epoch: &Option<usize>, path: &Option<PathBuf>) -> String {
    match (epoch, path) {
        (Some(e), Some(p)) => format!("end of epoch {e} (checkpoint {})", p.display()),
        (Some(e), None) => format!("end of epoch {e}"),
        (None, _) => "initial values".to_string(),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format { offset, message: message.into() }
    }

    /// True for errors caused by how the caller configured a run rather than
    /// by the data it pointed at.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Sweep { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}
