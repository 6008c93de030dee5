use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code classes:
/// configuration problems, data/parse problems, and internal numeric
/// failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at row {row}, column '{col}': {msg}")]
    Parse { row: usize, col: String, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate column '{0}': zero variance")]
    DegenerateColumn(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("basis error: {0}")]
    Basis(String),

    #[error("singular fit involving feature '{0}'")]
    SingularFit(String),

    #[error("prediction error: {0}")]
    Prediction(String),

    #[error("labeling rule error: {0}")]
    Rule(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code class: 2 = config, 3 = data, 4 = internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Generation(_) => 2,
            Error::Parse { .. }
            | Error::Data(_)
            | Error::DegenerateColumn(_)
            | Error::Split(_)
            | Error::Prediction(_)
            | Error::Rule(_)
            | Error::Io(_)
            | Error::Json(_) => 3,
            Error::Basis(_) | Error::SingularFit(_) | Error::Training(_) => 4,
        }
    }
}
