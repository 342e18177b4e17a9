use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav: {0}")]
    Wav(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{}", config_message(.path, *.line, .message))]
    Config {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },
    #[error("{}:{line}: {message}", path.display())]
    Meta { path: PathBuf, line: u64, message: String },
    #[error("feature cache {}: {message}", path.display())]
    Cache { path: PathBuf, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Core(#[from] htil_core::Error),
}

fn config_message(path: &std::path::Path, line: Option<usize>, message: &str) -> String {
    match line {
        Some(line) => format!("{}:{line}: {message}", path.display()),
        None => format!("{}: {message}", path.display()),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
