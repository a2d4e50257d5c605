use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("sequence too short: length {len} < kernel width {kernel}")]
    SequenceTooShort { len: usize, kernel: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("tape error: {0}")]
    Tape(String),
    #[error("optimizer error: {0}")]
    Optimizer(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown sensor `{0}`")]
    UnknownSensor(String),
    #[error("inconsistent dataset: {0}")]
    Consistency(String),
    #[error("empty training set")]
    EmptyTraining,
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("no sensor available for sample: {0}")]
    NoInformation(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("degenerate reference: full-sensor RMSE is zero")]
    DegenerateReference,
    #[error("target has zero variance")]
    UndefinedVariance,
    #[error("empty input")]
    EmptyInput,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("empty gallery")]
    EmptyGallery,
    #[error("missing normalization statistics")]
    MissingStats,
    #[error("not enough samples: {n} samples for {k} folds")]
    TooFewSamples { n: usize, k: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
