use vhm_core::VhmError;

/// Process exit categories: 0 ok, 2 config, 3 data, 4 numerics, 5 io.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerics,
    Io,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Numerics => 4,
            ErrorCategory::Io => 5,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] VhmError),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn io(path: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            CliError::Config(_) => ErrorCategory::Config,
            CliError::Data(_) => ErrorCategory::Data,
            CliError::Io { .. } => ErrorCategory::Io,
            CliError::Core(e) => match e {
                VhmError::Config(_) => ErrorCategory::Config,
                VhmError::Data(_) | VhmError::EmptySequence(_) | VhmError::Vocab { .. } => ErrorCategory::Data,
                VhmError::Shape { .. } | VhmError::Contract(_) | VhmError::Numerics(_) => ErrorCategory::Numerics,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
