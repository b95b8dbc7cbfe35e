use thiserror::Error;

/// Errors produced by model construction, inference, estimation and I/O.
#[derive(Debug, Error)]
pub enum PohmmError {
    #[error("no sequences")]
    NoSequences,

    #[error("empty sequence")]
    EmptySequence,

    #[error("symbol out of alphabet: id {id} with alphabet size {size}")]
    SymbolOutOfAlphabet { id: usize, size: usize },

    #[error("domain: log-normal emission requires positive values, got {value}")]
    Domain { value: f64 },

    #[error("degenerate responsibility mass")]
    DegenerateResponsibility,

    #[error("non-finite log-likelihood; offending cell: state {state}, event type {event}")]
    NonFinite { state: usize, event: String },

    #[error("non-finite log-likelihood")]
    NonFiniteLikelihood,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown user: {0}")]
    UnknownUser(String),

    #[error("missing column: {0}")]
    MissingColumn(String),

    #[error("line {line}: {reason}")]
    InvalidRow { line: u64, reason: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl PohmmError {
    /// True for failures of the numerical machinery rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, PohmmError::NonFinite { .. } | PohmmError::NonFiniteLikelihood | PohmmError::DegenerateResponsibility)
    }
}

pub type Result<T, E = PohmmError> = std::result::Result<T, E>;
