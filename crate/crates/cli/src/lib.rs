//! Configured, reproducible runs of the inversion workflow: synthetic
//! problems, surrogate fitting, chains, proposal comparison and diagnostics.

pub mod commands;
pub mod config;
pub mod output;

pub use config::ExperimentConfig;

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("surrogate fitting failed: {0}")]
    Fit(String),
    #[error("numerical failure in {module}: {message}")]
    Sampling {
        module: &'static str,
        message: String,
    },
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Fit(_) => 3,
            Self::Sampling { .. } => 4,
            Self::Io(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// Attaches a failure class to core results.
pub(crate) trait Classify<T> {
    fn fit_err(self) -> Result<T, CliError>;
    fn sampling_err(self, module: &'static str) -> Result<T, CliError>;
    fn io_err(self, what: &str) -> Result<T, CliError>;
}

impl<T, E: std::fmt::Display> Classify<T> for Result<T, E> {
    fn fit_err(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Fit(e.to_string()))
    }

    fn sampling_err(self, module: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Sampling {
            module,
            message: e.to_string(),
        })
    }

    fn io_err(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Io(format!("{what}: {e}")))
    }
}
