use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: model {model} requires {expected} dynamics, system has {found} dynamics")]
    ModelMismatch {
        model: &'static str,
        expected: &'static str,
        found: &'static str,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("operator is nilpotent (spectral radius 0)")]
    Nilpotent,

    #[error("basis is rank deficient: rank {rank} < {count}")]
    RankDeficient { rank: usize, count: usize },

    #[error("inadmissible word: transition {from} -> {to} at position {position} is forbidden")]
    InadmissibleWord {
        from: usize,
        to: usize,
        position: usize,
    },

    #[error("zero normalizer: every weighted word of length {0} vanishes")]
    ZeroNormalizer(usize),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("expansion needs {count} terms, above the cap of {cap}; use a larger eps to coarsen the grouping")]
    TermCap { count: usize, cap: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("numerical cross-check failed: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
