use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unbalanced panel: unit {unit} {detail}")]
    UnbalancedPanel { unit: String, detail: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("degenerate regressor: column {column} is constant within unit {unit}")]
    DegenerateRegressor { unit: String, column: String },

    #[error("singular Gram matrix ({context}), condition number {condition:e}")]
    SingularGram { context: String, condition: f64 },

    #[error("instruments are rank deficient for unit {unit}")]
    RankDeficientInstruments { unit: String },

    #[error("method gmm requires instrument columns z1..zq")]
    MissingInstruments,

    #[error("K exceeds N (K = {k}, N = {n})")]
    KTooLarge { k: usize, n: usize },

    #[error("invalid group pair ({k}, {k_prime}): {reason}")]
    InvalidPair {
        k: usize,
        k_prime: usize,
        reason: String,
    },

    #[error("degenerate direction: projected statistic {norm:e} is numerically zero")]
    DegenerateDirection { norm: f64 },

    #[error("statistic {stat} lies outside its truncation set")]
    StatOutsideSupport { stat: f64 },

    #[error("truncation set carries no probability mass under the reference law")]
    ZeroMassSupport,

    #[error("observed statistic {stat} excluded by constraint at iteration {iteration}, unit {unit}, group {group}")]
    ObservedStatExcluded {
        stat: f64,
        iteration: usize,
        unit: usize,
        group: usize,
    },

    #[error("covariance of the group difference is singular")]
    SingularCovariance,

    #[error("clustering degenerated: group {group} is empty in the final partition")]
    DegenerateClustering { group: usize },

    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line tool: 2 for input and
    /// specification errors, 3 for numerical or degenerate-inference errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnbalancedPanel { .. }
            | Error::Parse { .. }
            | Error::DegenerateRegressor { .. }
            | Error::SingularGram { .. }
            | Error::RankDeficientInstruments { .. }
            | Error::MissingInstruments
            | Error::KTooLarge { .. }
            | Error::InvalidPair { .. }
            | Error::InvalidSpec(_)
            | Error::InvalidArgument(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::DegenerateDirection { .. }
            | Error::StatOutsideSupport { .. }
            | Error::ZeroMassSupport
            | Error::ObservedStatExcluded { .. }
            | Error::SingularCovariance
            | Error::DegenerateClustering { .. } => 3,
        }
    }
}
