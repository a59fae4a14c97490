use std::path::PathBuf;

pub use strata_core::error::Category;

/// Errors raised by file formats, the HTTP client and the command layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] strata_core::Error),
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("{what} was produced from a different input: recorded {recorded}, current {current}")]
    Provenance {
        what: String,
        recorded: String,
        current: String,
    },
    #[error("missing {}: run `strata {step}` first", path.display())]
    MissingArtifact { path: PathBuf, step: &'static str },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Error::Core(e) => e.category(),
            Error::Io { .. } | Error::Format { .. } | Error::MissingArtifact { .. } => Category::Data,
            Error::Config(_) => Category::Config,
            Error::Network(_) | Error::Protocol(_) => Category::Network,
            Error::Provenance { .. } => Category::Validation,
        }
    }
}

/// Process exit code of a failure category.
pub fn exit_code(category: Category) -> u8 {
    match category {
        Category::Config => 2,
        Category::Data => 3,
        Category::Network => 4,
        Category::Validation => 5,
    }
}

/// Short machine-readable category label.
pub fn category_label(category: Category) -> &'static str {
    match category {
        Category::Config => "config",
        Category::Data => "data",
        Category::Network => "network",
        Category::Validation => "validation",
    }
}
