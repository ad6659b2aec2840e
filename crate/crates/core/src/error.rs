use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated an operation precondition (bad dimensions, bad ranges, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A numeric input (observation, increment) was NaN or infinite.
    #[error("non-finite numeric input: {0}")]
    NumericInput(String),

    /// The parameter estimate left the representable range.
    #[error("estimate diverged at step {step} (t = {t}): theta = {theta:?}")]
    Divergence {
        step: usize,
        t: f64,
        theta: Vec<f64>,
    },

    /// Configuration file could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
