use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Two tensors (or a tensor and its declared shape) disagree.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A class label or sample index falls outside its valid range.
    #[error("index error: {0}")]
    Index(String),

    /// A caller violated an operation's precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// An invalid hyperparameter or configuration value.
    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// The gradient is identically zero where a direction is required.
    #[error("degenerate gradient: {0}")]
    DegenerateGradient(String),

    /// A cosine similarity involving a zero-norm vector was requested.
    #[error("undefined cosine: {0}")]
    UndefinedCosine(String),

    /// Malformed external data (IDX files, snapshots).
    #[error("format error: {0}")]
    Format(String),

    /// Least-squares design matrix without full column rank.
    #[error("fit error: {0}")]
    Fit(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
