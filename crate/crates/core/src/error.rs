use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("transition row P[{state}][{action}] is not a probability vector (sum {sum}, min {min})")]
    NonStochasticRow {
        state: usize,
        action: usize,
        sum: f64,
        min: f64,
    },

    #[error("reward r[{state}][{action}] = {value} exceeds r_max = {r_max}")]
    RewardOutOfRange {
        state: usize,
        action: usize,
        value: f64,
        r_max: f64,
    },

    #[error("discount {0} is outside (0, 1)")]
    InvalidDiscount(f64),

    #[error("{kind} feature norm {norm} exceeds 1 at {location}")]
    FeatureNormExceeded {
        kind: &'static str,
        location: String,
        norm: f64,
    },

    #[error("critic features are rank deficient: {0}")]
    RankDeficientFeatures(String),

    #[error("induced Markov chain is not ergodic: {0}")]
    NotErgodic(String),

    #[error("linear system is numerically singular (condition number {cond:e})")]
    SingularSystem { cond: f64 },

    #[error("invalid hyper-parameters: {0}")]
    InvalidHyperParams(String),

    #[error("argument outside its domain: {0}")]
    DomainError(String),

    #[error("degenerate rate fit: {0}")]
    DegenerateFit(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("malformed record: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Validation-class failures map to exit code 2 in the CLI.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch(_)
                | Error::NonStochasticRow { .. }
                | Error::RewardOutOfRange { .. }
                | Error::InvalidDiscount(_)
                | Error::FeatureNormExceeded { .. }
                | Error::RankDeficientFeatures(_)
                | Error::NotErgodic(_)
                | Error::InvalidConfig(_)
        )
    }
}
