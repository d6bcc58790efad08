use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes, invalid architectures, unknown config keys.
    #[error("configuration error: {0}")]
    Config(String),
    /// Inputs outside an operation's domain (too few points, bad indices).
    #[error("input error: {0}")]
    Input(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("parse error at {path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Input(_) | Error::Parse { .. } | Error::Io { .. } => 2,
            Error::Numerical(_) => 3,
        }
    }
}
