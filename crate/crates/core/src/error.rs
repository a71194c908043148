use thiserror::Error;

/// Errors raised anywhere in the detection / training / filtering pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precision must be strictly positive to derive a false-positive rate (got {0})")]
    ZeroPrecision(f64),

    #[error("k-distance needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("period not identifiable: found {clusters} time cluster(s), need at least 2")]
    PeriodNotIdentifiable { clusters: usize },

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("kernel matrix not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("unknown {kind} token `{token}`")]
    UnknownToken { kind: &'static str, token: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed file: {0}")]
    Malformed(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
