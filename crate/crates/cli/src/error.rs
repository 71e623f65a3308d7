use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] shiftgrad::Error),

    #[error("{}: not found; {hint}", path.display())]
    Missing { path: PathBuf, hint: &'static str },

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Manifest(String),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Missing { .. } => "E_MISSING",
            CliError::Config(_) => "E_CONFIG",
            CliError::Manifest(_) => "E_MANIFEST",
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
