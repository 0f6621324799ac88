//! Error type shared by every module of the crate.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of estimation, fitting and experiment orchestration.
#[derive(Debug, Error)]
pub enum Error {
    /// The behavior policy assigns zero mass to an action the target policy can take.
    #[error("overlap violation at step {t}, action {action}: behavior probability is zero while target probability is {target_prob}")]
    OverlapViolation {
        t: usize,
        action: usize,
        target_prob: f64,
    },

    #[error("invalid fold count: K = {k} with n = {n} (need 2 <= K <= n)")]
    InvalidFoldCount { k: usize, n: usize },

    #[error("singular design at step {t}: Gram matrix is rank deficient and ridge is zero")]
    SingularDesign { t: usize },

    #[error("state space is not finite; {0} requires a finite state space")]
    InfiniteStateSpace(&'static str),

    #[error("bandwidth must be positive, got {0}")]
    NonpositiveBandwidth(f64),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    /// A nuisance used on fold `fold` was trained on a row of that fold.
    #[error("fold leakage: nuisance for fold {fold} was trained on row {row} of the same fold")]
    FoldLeakage { fold: usize, row: usize },

    #[error("bound violated: {0}")]
    BoundViolated(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("failure budget exceeded: {failures} of {attempts} estimator runs failed")]
    FailureBudgetExceeded { failures: usize, attempts: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
