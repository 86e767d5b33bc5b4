use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0}")]
    Model(#[from] paris_smc::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// One or more replicates collapsed; artifacts were still written.
    #[error("{count} replicate(s) collapsed; see {summary}")]
    Collapsed { count: usize, summary: String },

    #[error("{0} oracle check(s) failed")]
    OracleFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Collapsed { .. } => 3,
            _ => 1,
        }
    }
}
