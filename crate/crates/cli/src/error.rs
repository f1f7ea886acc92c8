use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] fsml_core::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for bad data, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numeric_error() => 4,
            CliError::Core(e) if e.is_data_error() => 3,
            CliError::Core(_) => 2,
        }
    }
}
