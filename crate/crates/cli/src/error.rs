use thiserror::Error;

/// Failures of a command, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Training(_) => 4,
            CliError::Verification(_) => 5,
        }
    }
}

impl From<dualformer::Error> for CliError {
    fn from(e: dualformer::Error) -> Self {
        use dualformer::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) => CliError::Config(msg),
            E::Training { .. } | E::NonFinite { .. } => CliError::Training(msg),
            E::Shape { .. }
            | E::Contract(_)
            | E::NoDominantFrequency { .. }
            | E::DegenerateSignal
            | E::Parse { .. }
            | E::Evaluation(_)
            | E::Checkpoint(_)
            | E::Io(_)
            | E::Json(_) => CliError::Data(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
