use std::process::ExitCode;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] fossa::Error),

    #[error("stage `{stage}` failed{}: {source}", seed.map(|s| format!(" for seed {s}")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        seed: Option<u64>,
        #[source]
        source: Box<CliError>,
    },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// `2` for configuration, input and IO problems, `3` for numerical failures.
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Core(_) => EXIT_CONFIG,
            CliError::Stage { source, .. } => source.code(),
        }
    }
}

/// Tags an error with the pipeline stage (and seed) it came from.
pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str, seed: Option<u64>) -> CliResult<T>;
}

impl<T, E: Into<CliError>> StageContext<T> for Result<T, E> {
    fn stage(self, stage: &'static str, seed: Option<u64>) -> CliResult<T> {
        self.map_err(|e| match e.into() {
            already @ CliError::Stage { .. } => already,
            other => CliError::Stage {
                stage,
                seed,
                source: Box::new(other),
            },
        })
    }
}
