use thiserror::Error;

/// Errors raised by the solvers and drivers in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("degenerate bordered operator: {0}")]
    DegenerateOperator(String),

    #[error("kernel vector is not strictly positive (min = {min:e}); refine the grid or reduce the drift")]
    PositivityViolation { min: f64 },

    #[error("Newton iteration for the ergodic HJB equation diverged after {iterations} iterations (residual {residual:e})")]
    DivergedHjb { iterations: usize, residual: f64 },

    #[error("coarse grid: {0}")]
    CoarseGrid(String),

    #[error("fixed point did not converge after {iterations} iterations (last |m - m'| = {last_change:e}, hjb residual {hjb_residual:e})")]
    NoConvergence {
        iterations: usize,
        last_change: f64,
        hjb_residual: f64,
    },

    #[error("degenerate linearization: {0}")]
    DegenerateLinearization(String),

    #[error("inconsistent sensitivity constant: block solve {block:.17e} vs compatibility formula {formula:.17e}")]
    Inconsistency { block: f64, formula: f64 },

    #[error("sign violation: dH/dalpha = {0:e} must be negative")]
    SignViolation(f64),

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("unsupported potential: {0}")]
    UnsupportedPotential(String),

    #[error("at (P = {p:?}, alpha = {alpha}): {source}")]
    AtPoint {
        p: Vec<f64>,
        alpha: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("regime error at P = {p}: {reason}; use larger P")]
    Regime { p: f64, reason: String },

    #[error("forward-backward coupling did not converge after {iterations} iterations (last change {last_change:e})")]
    Coupling {
        iterations: usize,
        last_change: f64,
        history: Vec<f64>,
    },

    #[error("scheme failure: density m1 + n reached {min:e} at step {step}; reduce the time step")]
    SchemeFailure { step: usize, min: f64 },

    #[error("Cole-Hopf transform broke down (w = {value:e} at step {step})")]
    TransformBreakdown { step: usize, value: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Wraps `self` with the (P, alpha) point at which it occurred.
    pub fn at_point(self, p: &[f64], alpha: f64) -> Self {
        Error::AtPoint {
            p: p.to_vec(),
            alpha,
            source: Box::new(self),
        }
    }

    /// The innermost error, stripping `AtPoint` tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtPoint { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of an iterative solver to converge.
    pub fn is_convergence_failure(&self) -> bool {
        matches!(
            self.root(),
            Error::DivergedHjb { .. }
                | Error::NoConvergence { .. }
                | Error::Coupling { .. }
                | Error::CoarseGrid(_)
                | Error::PositivityViolation { .. }
                | Error::SchemeFailure { .. }
                | Error::TransformBreakdown { .. }
                | Error::Regime { .. }
                | Error::Singular(_)
                | Error::DegenerateOperator(_)
                | Error::DegenerateLinearization(_)
                | Error::Inconsistency { .. }
                | Error::SignViolation(_)
                | Error::InsufficientData(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
