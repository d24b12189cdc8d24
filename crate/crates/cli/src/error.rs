use std::path::PathBuf;

/// Pipeline failure, mapped to the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure in {context}: {source}")]
    Numerical {
        context: String,
        #[source]
        source: dglm_core::Error,
    },

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Output { .. } => 2,
            CliError::Data(_) => 3,
            CliError::Numerical { .. } => 4,
        }
    }

    pub(crate) fn numerical(context: impl Into<String>) -> impl FnOnce(dglm_core::Error) -> Self {
        let context = context.into();
        move |source| match source {
            // Values outside a family's support are bad input, not a
            // numerical failure.
            dglm_core::Error::Support { .. } => CliError::Data(format!("{context}: {source}")),
            source => CliError::Numerical { context, source },
        }
    }

    pub(crate) fn output(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Output { path, source }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
