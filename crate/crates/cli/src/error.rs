use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Numerical(String),

    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    /// One-line JSON record for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": { "kind": self.kind(), "code": self.exit_code(), "message": self.to_string() } })
            .to_string()
    }
}

impl From<onlab::Error> for CliError {
    fn from(e: onlab::Error) -> Self {
        use onlab::Error as E;
        match e {
            E::Io(_) => CliError::Io(e.to_string()),
            // Shape and parameter problems trace back to the configuration or
            // the files it points at.
            E::DimensionMismatch { .. }
            | E::UnsupportedNorm(_)
            | E::InvalidNorm(_)
            | E::InvalidKind(_)
            | E::InvalidArgument(_)
            | E::NpHardCombination { .. }
            | E::TooLarge { .. }
            | E::GeometryError(_)
            | E::Format(_) => CliError::Config(e.to_string()),
            E::ZeroVector
            | E::ConvergenceFailure { .. }
            | E::ZeroJacobianProduct { .. }
            | E::RankDeficient { .. }
            | E::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            CliError::Io(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}
