use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("query arity {arity} exceeds sample size {len}")]
    ArityExceedsSample { arity: usize, len: usize },

    #[error("enumeration needs {needed} terms, above the cap of {cap}, and no Monte Carlo budget was supplied")]
    EnumerationCap { needed: u128, cap: u64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("evaluator returned {value}, outside its declared range")]
    ContractViolation { value: f64 },

    #[error("the exact output law of an opaque query is not available")]
    OpaqueQuery,

    #[error("distributions are over different ranges")]
    RangeMismatch,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("budget refused: charge {requested} exceeds remaining {remaining}")]
    BudgetRefused { requested: f64, remaining: f64 },

    #[error("query not admitted against this population: {0}")]
    NotAdmitted(String),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
