use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: cannot decode image: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    /// Malformed annotation or fixture record; `field` is a path such as
    /// `anno_train.json[3].lip_color`.
    #[error("schema error at {field}: {message}")]
    Schema { field: String, message: String },
    #[error("pair {pair_id}: {message}")]
    Pair { pair_id: String, message: String },
    #[error("region detection failed: {0}")]
    Detection(String),
    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("metric plugin {name}: {message}")]
    Plugin { name: String, message: String },
    #[error(transparent)]
    Core(#[from] facesketch_core::Error),
}

/// Coarse failure class, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Runtime,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn pair(pair_id: &str, message: impl Into<String>) -> Self {
        Error::Pair {
            pair_id: pair_id.to_owned(),
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        use facesketch_core::Error as C;
        match self {
            Error::Usage(_) => ErrorClass::Usage,
            Error::Io { .. }
            | Error::Image { .. }
            | Error::Schema { .. }
            | Error::Pair { .. }
            | Error::Detection(_)
            | Error::Checkpoint { .. } => ErrorClass::Data,
            Error::Plugin { .. } => ErrorClass::Runtime,
            Error::Core(C::StyleLabel(_) | C::Config(_)) => ErrorClass::Usage,
            Error::Core(C::Region(_) | C::Dimension(_)) => ErrorClass::Data,
            Error::Core(_) => ErrorClass::Runtime,
        }
    }
}
