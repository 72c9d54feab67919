use thiserror::Error;

/// Errors produced by the core library.
///
/// `Config` covers invalid shapes, geometries, and hyperparameters and names
/// the offending field or axis. `Usage` covers API misuse such as stepping a
/// finished environment or calling backward without a cached forward.
/// `Training` carries the step index at which a numerical failure occurred.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("training error at step {step}: {message}")]
    Training { step: u64, message: String },
    #[error("{0}")]
    External(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn usage_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
