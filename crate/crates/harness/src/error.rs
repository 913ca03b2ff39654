use std::path::PathBuf;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config line {line}: {reason}")]
    ConfigSyntax { line: usize, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: byte {offset}: {reason}")]
    Ppm { path: PathBuf, offset: u64, reason: String },
    #[error("csv {path}: {reason}")]
    Csv { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] gsm_forge_core::Error),
}

impl HarnessError {
    pub fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}
