use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] multiage::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
}

impl CliError {
    /// 3 for divergence during training, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(multiage::Error::Diverged { .. }) => 3,
            _ => 2,
        }
    }

    pub(crate) fn input(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Input {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
