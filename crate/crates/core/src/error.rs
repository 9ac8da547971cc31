use thiserror::Error;

/// Errors raised by estimation, inference, ingestion and simulation.
#[derive(Debug, Error)]
pub enum BettaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("design matrix is rank deficient: column `{column}` is collinear with {others:?}")]
    RankDeficient { column: String, others: Vec<String> },

    #[error("model is unidentifiable: {0}")]
    Unidentifiable(String),

    #[error("restricted likelihood is not finite (degenerate weights)")]
    DegenerateWeights,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("test not applicable: {0}")]
    NotApplicable(String),

    #[error("insufficient residual degrees of freedom: m = {m}, p = {p} (need m > p + 1)")]
    DegreesOfFreedom { m: usize, p: usize },

    #[error("covariate `{0}` is constant within every group and confounded with the grouping factor")]
    Confounded(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty frequency count table")]
    EmptyTable,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("richness gradient undefined: source table has no singletons")]
    NoSingletons,

    #[error("estimator protocol error: {0}")]
    EstimatorProtocol(String),

    #[error("estimator failed: {0}")]
    EstimatorFailed(String),

    #[error("bootstrap unstable: {failed} of {total} resamples failed")]
    BootstrapUnstable { failed: usize, total: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BettaError>;
