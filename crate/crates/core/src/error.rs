use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error(
        "discarded tail mass {tail_mass:.3e} exceeds {limit:.1e} at support_cap {support_cap}; \
         support_cap must be at least {required_cap}"
    )]
    Truncation {
        tail_mass: f64,
        limit: f64,
        support_cap: usize,
        /// Rendered as a number or as a lower bound when the search gave up.
        required_cap: String,
    },

    #[error("out of range: {0}")]
    Range(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("empty posterior support: {0}")]
    Posterior(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("training aborted at epoch {epoch}, batch {batch}: {reason}")]
    Training {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error("sampler failed on chain {chain} at step {step}: {source}")]
    Sampler {
        chain: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
