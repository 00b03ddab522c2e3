use std::path::PathBuf;

/// Pipeline failure, mapped to a process exit status.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    MissingArtifact(PathBuf),
    Invariant(String),
    Core(trendrec::Error),
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::Invariant(_) => 4,
            CliError::Core(_) | CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::MissingArtifact(p) => write!(f, "missing input: {}", p.display()),
            CliError::Invariant(m) => write!(f, "invariant violated: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<trendrec::Error> for CliError {
    fn from(e: trendrec::Error) -> Self {
        match e {
            trendrec::Error::Config { field, reason } => {
                CliError::Config(format!("{field}: {reason}"))
            }
            trendrec::Error::Invariant(m) => CliError::Invariant(m),
            other => CliError::Core(other),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}
