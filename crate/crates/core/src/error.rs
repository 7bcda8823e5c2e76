use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("empty selection: at least one sensor must be selected")]
    EmptySelection,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("empty signal: {0}")]
    EmptySignal(String),

    #[error("window of {window} points exceeds signal length {len}")]
    WindowTooLong { window: usize, len: usize },

    #[error("inconsistent input: {0}")]
    Inconsistent(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("cannot split {samples} samples into {folds} folds")]
    TooFewSamples { samples: usize, folds: usize },

    #[error("stratification impossible: class {class} has {count} sample(s)")]
    Stratification { class: usize, count: usize },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("target sensor count {k} out of range {min}..={max}")]
    KOutOfRange { k: usize, min: usize, max: usize },

    #[error("exhaustive search over {subsets} subsets exceeds budget of {budget}")]
    BudgetExceeded { subsets: u128, budget: u128 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Format(e.to_string())
    }
}
