use edgenas_core::accel::ConfigError;
use edgenas_core::ir::ModelError;
use edgenas_core::EstimateError;
use edgenas_service::ClientError;

/// Exit status for unreadable or malformed input and bad flags.
pub const USAGE: u8 = 1;
/// Exit status for input that parses but fails validation.
pub const INVALID: u8 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl ToString) -> Self {
        Self {
            code: USAGE,
            message: message.to_string(),
        }
    }

    pub fn invalid(message: impl ToString) -> Self {
        Self {
            code: INVALID,
            message: message.to_string(),
        }
    }

    pub fn context(mut self, what: impl std::fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Parse(_) => Self::usage(e),
            ModelError::Invalid(ref violations) => {
                let list: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
                Self::invalid(format!(
                    "model failed validation with {} violation(s):\n{}",
                    violations.len(),
                    list.join("\n")
                ))
            }
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) | ConfigError::Parse(_) => Self::usage(e),
            _ => Self::invalid(e),
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::Validation(v) => ModelError::Invalid(v).into(),
            EstimateError::Config(c) => c.into(),
            other => Self::invalid(other),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match &e {
            ClientError::Rejected(body) if body.status == 422 => {
                let list: Vec<String> = body
                    .violations
                    .iter()
                    .filter_map(|v| v.get("message").and_then(|m| m.as_str()))
                    .map(|m| format!("\n  {m}"))
                    .collect();
                Self::invalid(format!("{e}{}", list.concat()))
            }
            _ => Self::usage(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::usage(e)
    }
}

impl From<edgenas_core::io::CsvError> for CliError {
    fn from(e: edgenas_core::io::CsvError) -> Self {
        Self::usage(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::usage(e)
    }
}
