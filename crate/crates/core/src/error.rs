use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("degenerate ensemble: all members equal ({0})")]
    DegenerateEnsemble(String),

    #[error("degenerate quantity: {0}")]
    DegenerateQuantity(String),

    #[error("undefined wind direction for (0, 0)")]
    UndefinedDirection,

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("undefined skill score: reference mean is {0}")]
    UndefinedSkill(f64),

    #[error("unknown station {0}")]
    UnknownStation(u32),

    #[error("fit failure: {message}")]
    FitFailure {
        message: String,
        /// Last iterate of the optimizer, when one exists.
        last_iterate: Option<Vec<f64>>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Schema(_)
            | Error::DegenerateEnsemble(_)
            | Error::DegenerateQuantity(_)
            | Error::UndefinedDirection
            | Error::UnknownStation(_)
            | Error::Csv(_)
            | Error::Io { .. } => 3,
            Error::FitFailure { .. } | Error::DegenerateSeries(_) | Error::UndefinedSkill(_) => 4,
            Error::MissingArtifact(_) => 5,
            Error::Json(_) => 3,
        }
    }
}

pub(crate) fn ensure_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} is not finite ({x})")))
    }
}
