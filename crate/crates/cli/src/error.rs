use thiserror::Error;

/// Command failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed configuration, unknown keys, bad parameters.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Infeasible(String),
    /// The search budget ran out; partial results may have been written.
    #[error("{0}")]
    Budget(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Infeasible(_) => 3,
            Self::Budget(_) => 4,
            Self::Failed(_) => 1,
        }
    }
}

impl From<tecoord::error::Error> for CliError {
    fn from(e: tecoord::error::Error) -> Self {
        use tecoord::error::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidParameter(_) | E::Dimension(_) | E::OutOfGrid { .. } | E::IndexOutOfRange { .. } => {
                Self::Config(msg)
            }
            E::Infeasible(_) | E::MarketInfeasible { .. } => Self::Infeasible(msg),
            E::BudgetExhausted { .. } => Self::Budget(msg),
            _ => Self::Failed(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Failed(format!("i/o error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Failed(format!("csv error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Failed(format!("serialization error: {e}"))
    }
}
