use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("regime violation: {0}")]
    Regime(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("state space too large: {states} states exceeds limit {limit}")]
    Capacity { states: u128, limit: u128 },
    #[error("singular chain: gamma_{index} = 0")]
    SingularChain { index: usize },
    #[error("target unreachable: {0}")]
    Unreachable(String),
    #[error("diagnostics: {0}")]
    Diagnostics(String),
    #[error("censored: {censored} of {total} replicas hit the step cap {cap}")]
    Censored { censored: usize, total: usize, cap: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
