use thiserror::Error;

/// Errors raised by the model, oracle, controllers and simulation engine.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// Mismatched dimensions, unknown zones, bad neighbour sets and similar shape problems.
    #[error("structural error: {0}")]
    Structure(String),

    /// A parameter violates its documented domain.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    /// Non-finite values, singular matrices, failed eigen-decompositions.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// COP line is non-positive at the requested supply temperature.
    #[error("COP domain error: b - a*T_s = {cop} <= 0 at T_s = {supply}")]
    CopDomain { supply: f64, cop: f64 },

    /// Flow recovery with |T_s - Z_f| below the guard.
    #[error("degenerate flow denominator: |T_s - Z_f| = {gap:e}")]
    DegenerateDenominator { gap: f64 },

    /// `positive_projection` called with a negative variable.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Reference solver exceeded its iteration budget.
    #[error("reference solver did not converge after {iterations} iterations (best KKT residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// Unreadable configuration document or override.
    #[error("config error: {0}")]
    Config(String),

    /// Message posted on a link that does not exist in the topology.
    #[error("routing error: {0}")]
    Routing(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_positive(field: impl Into<String>, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            field: field.into(),
            reason: format!("must be > 0 (got {value})"),
        })
    }
}

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numeric(format!("{what}[{i}] is not finite ({})", values[i]))),
        None => Ok(()),
    }
}
