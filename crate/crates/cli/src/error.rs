use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
    #[error("refused: {0}")]
    Refused(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { .. } => 3,
            CliError::Refused(_) => 4,
        }
    }

    pub fn stage(stage: &str, message: impl ToString) -> Self {
        CliError::Stage {
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }
}
