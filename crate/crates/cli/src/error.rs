//! Domain failures mapped to stable error codes (exit status 1).

use thiserror::Error;
use tomsim::backend::BackendError;
use tomsim::data::DataError;
use tomsim::engine::EngineError;
use tomsim::eval::EvalError;
use tomsim::self_agent::AgentError;

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("E_CONFIG", message)
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        let code = match e {
            BackendError::ScriptParse { .. } | BackendError::Io { .. } => "E_SCRIPT",
            BackendError::Config(_) => "E_CONFIG",
            _ => "E_BACKEND",
        };
        Self::new(code, e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match e {
            DataError::Io { .. } => "E_IO",
            _ => "E_DATA",
        };
        Self::new(code, e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let code = match e {
            EngineError::Io { .. } => "E_IO",
            EngineError::TraceFormat { .. } => "E_TRACE_FORMAT",
            EngineError::InvalidConfig(_) => "E_CONFIG",
            EngineError::InsufficientSeeds { .. } => "E_DATA",
        };
        Self::new(code, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let code = match e {
            EvalError::Io { .. } => "E_IO",
            _ => "E_EVAL",
        };
        Self::new(code, e.to_string())
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Backend(b) => b.into(),
            other => Self::new("E_AGENT", other.to_string()),
        }
    }
}
