use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{op}: expected at least one view")]
    EmptyViews { op: &'static str },

    #[error("aggregation weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("no template covers attribute category `{category}` (term `{term}`)")]
    UncoveredAttribute { term: String, category: String },

    #[error("antonym lexicon has no entry for `{0}`")]
    MissingAntonym(String),

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("token id {id} is outside the vocabulary of {vocab} entries")]
    UnknownTokenId { id: usize, vocab: usize },

    #[error("response join failed: missing ids {missing:?}, unexpected ids {extra:?}")]
    Join { missing: Vec<String>, extra: Vec<String> },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

impl Error {
    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidTensor(_) => "tensor",
            Error::Domain { .. } => "domain",
            Error::Contract(_) => "contract",
            Error::EmptyViews { .. } => "arity",
            Error::WeightSum { .. } => "weight_sum",
            Error::Config(_) => "config",
            Error::UncoveredAttribute { .. } => "template",
            Error::MissingAntonym(_) => "lexicon",
            Error::UnknownToken(_) | Error::UnknownTokenId { .. } => "token",
            Error::Join { .. } => "join",
            Error::Data(_) => "data",
            Error::NonFiniteLoss { .. } => "non_finite",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.to_string(),
        }
    }
}
