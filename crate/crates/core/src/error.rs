use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit reports. Variants are grouped by the kind of
/// contract that was broken so callers (and the CLI) can map them to codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("empty sequence: {0}")]
    EmptySequence(String),

    #[error("optimizer state: {0}")]
    State(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("input too short: {len} samples, need at least {need}")]
    InputTooShort { len: usize, need: usize },

    #[error("normalization: coefficient {coefficient} has zero standard deviation")]
    Normalization { coefficient: usize },

    #[error("unsupported rate: {0}")]
    UnsupportedRate(String),

    #[error("degenerate guided-PCA stage {stage} ({parameter}): {reason}")]
    DegenerateStage {
        stage: usize,
        parameter: String,
        reason: String,
    },

    #[error("schema: {0}")]
    Schema(String),

    #[error("domain: {0}")]
    Domain(String),

    #[error("config: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("correlation undefined for parameter {parameter}: zero variance")]
    UndefinedCorrelation { parameter: String },

    #[error("missing item: {0}")]
    MissingItem(String),

    #[error("label coverage: {0}")]
    LabelCoverage(String),

    #[error("word error rate undefined for an empty reference")]
    UndefinedWer,

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable code used by the command-line surface.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Numeric(_) => "numeric",
            Error::EmptySequence(_) => "empty_sequence",
            Error::State(_) => "state",
            Error::Contract(_) => "contract",
            Error::InputTooShort { .. } => "input_too_short",
            Error::Normalization { .. } => "normalization",
            Error::UnsupportedRate(_) => "unsupported_rate",
            Error::DegenerateStage { .. } => "degenerate_stage",
            Error::Schema(_) => "schema",
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Divergence { .. } => "divergence",
            Error::UndefinedCorrelation { .. } => "undefined_correlation",
            Error::MissingItem(_) => "missing_item",
            Error::LabelCoverage(_) => "label_coverage",
            Error::UndefinedWer => "undefined_wer",
            Error::Format { .. } => "format",
            Error::Parse { .. } => "parse",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
