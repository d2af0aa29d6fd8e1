use flowlab_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config { field: field.into(), message: message.into() }
    }

    /// 2 for configuration problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::Numerical(_) => 3,
            _ => 1,
        }
    }
}

/// Classifies a core error raised while running an experiment.  Parameter
/// errors trace back to the config; everything else is numerical.
pub fn from_core(field: &str, e: CoreError) -> HarnessError {
    match e {
        CoreError::InvalidParameter { name, reason } => HarnessError::config(format!("{field}.{name}"), reason),
        CoreError::DimensionMismatch { .. } | CoreError::UngradedGrid { .. } | CoreError::NotCounterexample | CoreError::MissingCapability(_) => {
            HarnessError::config(field, e.to_string())
        }
        other => HarnessError::Numerical(other.to_string()),
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
