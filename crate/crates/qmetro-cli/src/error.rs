use std::path::PathBuf;

/// Failures surfaced by the command line and the service.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    /// Validation failure at a dotted key path such as `objective.W`.
    #[error("invalid `{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Library(#[from] qmetro::Error),
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Invalid { path: path.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 0 success, 1 I/O, 2 configuration, 3 numerical, 4 target not reached.
    pub fn exit_code(&self) -> i32 {
        use qmetro::Error as E;
        match self {
            CliError::Parse(_) | CliError::Invalid { .. } => 2,
            CliError::Io { .. } => 1,
            CliError::Library(e) => match e {
                E::NotFound { .. } => 4,
                E::Convergence(_) | E::NonExistence(_) | E::Infeasible(_) | E::Degenerate(_) => 3,
                E::Dimension(_) | E::Domain(_) | E::InvalidChannel(_) | E::Unsupported(_) | E::UnknownTemplate(_) => 2,
            },
        }
    }
}

/// Attaches a key path to a library error raised while building from config.
pub fn at(path: &str) -> impl FnOnce(qmetro::Error) -> CliError + '_ {
    move |e| CliError::invalid(path, e.to_string())
}
