use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, unreadable inputs or a refused overwrite.
    #[error("{0}")]
    Usage(String),
    /// Unparseable or invalid run configuration.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] autosem_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("replay diverged at stage {stage}, round {round}")]
    Diverged { stage: u8, round: usize },
    #[error("{failed} of {total} seed runs failed")]
    Workers { failed: usize, total: usize, code: u8 },
}

impl CliError {
    /// 0 ok, 1 runtime failure, 2 usage or config error.
    pub fn exit_code(&self) -> u8 {
        use autosem_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Core(E::Config { .. } | E::Usage(_) | E::Domain(_)) => 2,
            CliError::Core(_) | CliError::Io { .. } | CliError::Diverged { .. } => 1,
            CliError::Workers { code, .. } => *code,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}
