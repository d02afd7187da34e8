use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The budget makes the estimator or noise scale undefined.
    #[error("degenerate budget: {0}")]
    DegenerateBudget(String),

    /// Privacy bounds are only proven for two groups.
    #[error("privacy bounds are only certified for 2 groups, got {0}")]
    UncertifiedArity(u32),

    #[error("group {0} has no tally entry")]
    MissingGroup(u32),

    #[error("group {0} has no mean; required for the misestimated-size analysis")]
    MissingMean(usize),

    #[error("upper-bound MSE is not monotone in eps near eps={eps} ({prev} -> {next})")]
    NonMonotonic { eps: f64, prev: f64, next: f64 },

    #[error("infeasible generator: {0}")]
    InfeasibleGenerator(String),

    #[error("no seed observations for group {0}")]
    EmptySeed(u32),

    #[error("row {row}: {msg}")]
    MalformedRow { row: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by parameter values rather than malformed input.
    pub fn is_parameter_error(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::DegenerateBudget(_)
                | Error::UncertifiedArity(_)
                | Error::NonMonotonic { .. }
        )
    }
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
