use thiserror::Error;

/// Library-wide error type. Fail-fast: numeric routines reject non-finite
/// inputs instead of propagating NaN through an experiment.
#[derive(Debug, Error)]
pub enum MeesError {
    /// Caller passed a structurally invalid argument (wrong length, empty
    /// slice, out-of-range constant).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Non-finite value where a finite one is required. Reports the first
    /// offending index when scanning a slice.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// Configuration file rejected (parse error, unknown key, bad value).
    #[error("config: {0}")]
    Config(String),

    /// Archive or checkpoint file rejected.
    #[error("persistence: {0}")]
    Persist(String),

    /// Linear-algebra failure (non-positive-definite kernel matrix after
    /// jitter escalation).
    #[error("linear algebra: {0}")]
    LinAlg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Returns an error naming the lowest offending index if any entry of `xs`
/// is NaN or infinite.
pub fn check_finite(what: &str, xs: &[f64]) -> Result<(), MeesError> {
    for (i, &x) in xs.iter().enumerate() {
        if !x.is_finite() {
            return Err(MeesError::NonFinite(format!("{what}[{i}] = {x}")));
        }
    }
    Ok(())
}
