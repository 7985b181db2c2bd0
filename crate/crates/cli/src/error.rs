use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing prerequisite: {0}")]
    Missing(String),

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Missing(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<affectcae::Error> for CliError {
    fn from(e: affectcae::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
