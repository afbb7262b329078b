use gonogo_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("unknown scale {0:?} (expected \"desk\" or \"full\")")]
    UnknownScale(String),

    #[error("{what} expects a {expected} model, got {actual}")]
    ScaleMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },

    #[error("training set item {index} is labeled {label}; only positive examples are allowed")]
    NonPositiveLabel { index: usize, label: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    MissingInput(String),

    #[error("need both classes, got {positives} positive and {negatives} negative examples")]
    SingleClass { positives: usize, negatives: usize },
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
