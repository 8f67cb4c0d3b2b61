use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown config key `{key}`{}", at(*line))]
    UnknownKey { key: String, line: Option<usize> },
    #[error("invalid value `{value}` for `{key}`{}: {message}", at(*line))]
    InvalidValue {
        key: String,
        value: String,
        message: String,
        line: Option<usize>,
    },
    #[error("`{key}` out of range: {message}")]
    Range { key: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Numerical(#[from] lram::Error),
    /// The run finished and wrote its outputs but did not succeed numerically.
    #[error("{0}")]
    Failed(String),
}

fn at(line: Option<usize>) -> String {
    line.map(|l| format!(" (line {l})")).unwrap_or_default()
}

impl CliError {
    /// 1 for usage and configuration errors, 2 for numerical or I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_)
            | CliError::Parse { .. }
            | CliError::UnknownKey { .. }
            | CliError::InvalidValue { .. }
            | CliError::Range { .. } => 1,
            CliError::Io { .. } | CliError::Numerical(_) | CliError::Failed(_) => 2,
        }
    }

    pub(crate) fn at_line(self, l: usize) -> Self {
        match self {
            CliError::UnknownKey { key, .. } => CliError::UnknownKey { key, line: Some(l) },
            CliError::InvalidValue { key, value, message, .. } => CliError::InvalidValue {
                key,
                value,
                message,
                line: Some(l),
            },
            other => other,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
