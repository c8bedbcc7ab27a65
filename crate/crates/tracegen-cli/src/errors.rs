use tracegen_core::model::ModelError;

/// Command failure with its exit code class: usage 1, data 2, training 3.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
    Training(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Training(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Data(e) | CliError::Training(e) => {
                if f.alternate() {
                    write!(f, "{e:#}")
                } else {
                    write!(f, "{e}")
                }
            }
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn data(err: impl Into<anyhow::Error>) -> CliError {
    CliError::Data(err.into())
}

pub fn training(err: impl Into<anyhow::Error>) -> CliError {
    CliError::Training(err.into())
}

/// Training-path model errors split by class: misconfiguration is usage,
/// bad inputs are data, a diverging run is a training failure.
pub fn from_model(err: ModelError) -> CliError {
    match err {
        ModelError::BadConfig(_) => usage(err.to_string()),
        ModelError::NonFiniteLoss { .. } => training(err),
        _ => data(err),
    }
}
