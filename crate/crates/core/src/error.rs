use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, PartialEq)]
pub enum Error {
    /// A value violated a construction invariant. `field` names the offending input.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("delay {0} is below the minimum delay of 1")]
    DelayBelowOne(f64),

    #[error("tier index {index} out of range (chain has {tiers} tiers)")]
    TierIndex { index: usize, tiers: usize },

    #[error("block {block} is outside the load schedule ({total} blocks)")]
    BlockOutOfSchedule { block: u64, total: u64 },

    #[error("analytic demand is unavailable: {0}")]
    AnalyticUnsupported(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("policy delays infeasible: {0}")]
    Infeasible(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
