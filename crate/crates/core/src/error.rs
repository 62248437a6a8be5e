use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LormaError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("rank deficient: observed rank {observed}, required {required}")]
    RankDeficient { observed: usize, required: usize },

    #[error("numerical failure in {op}: {detail}")]
    NumericalFailure { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("undefined metric {metric}: {detail}")]
    UndefinedMetric { metric: &'static str, detail: String },

    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: usize, detail: String },

    #[error("io error: {0}")]
    Io(String),
}

impl LormaError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        LormaError::Shape {
            op,
            detail: detail.into(),
        }
    }
}

impl From<std::io::Error> for LormaError {
    fn from(e: std::io::Error) -> Self {
        LormaError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LormaError>;
