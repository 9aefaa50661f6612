use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied data or options that violate a precondition.
    #[error("input error: {0}")]
    Input(String),

    /// A cell of a delimited file could not be parsed.
    #[error("parse error in {file} at row {row}, column {column}: {message}")]
    Parse {
        file: String,
        row: usize,
        column: usize,
        message: String,
    },

    /// The lasso path collapsed because the response carries no signal.
    #[error("degenerate path: lambda_max is zero")]
    DegeneratePath,

    /// A correlation was requested on a vector with zero variance.
    #[error("degenerate correlation")]
    DegenerateCorrelation,

    /// ROC analysis needs both positives and negatives.
    #[error("undefined ROC: {0}")]
    UndefinedRoc(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::DegeneratePath | Error::DegenerateCorrelation => 2,
            _ => 1,
        }
    }
}
