use thiserror::Error;

/// Errors raised by the pricing engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("lattice overflow: {0}")]
    Overflow(String),

    #[error(
        "quadrature did not converge: estimate {estimate:e}, error bound {error:e} after {intervals} subintervals"
    )]
    QuadratureNonConvergence {
        estimate: f64,
        error: f64,
        intervals: usize,
    },

    #[error("PSOR did not converge at time step {step} within {sweeps} sweeps; worst residual {residual:e}")]
    PsorNonConvergence { step: usize, sweeps: usize, residual: f64 },

    #[error(
        "penalty Newton iteration diverged at time step {step} after {iterations} iterations; last update {update:e}"
    )]
    NewtonDivergence {
        step: usize,
        iterations: usize,
        update: f64,
    },

    #[error(
        "semilinear active set still cycling at time step {step} after {iterations} iterations; last move {movement:e}"
    )]
    ActiveSetCycling {
        step: usize,
        iterations: usize,
        movement: f64,
    },

    #[error(
        "contact set is not a single interval at the {side} end on {count} time slice(s), first at t = {first_time}"
    )]
    StructuralViolation {
        side: &'static str,
        count: usize,
        first_time: f64,
        slices: Vec<usize>,
    },

    #[error("scalar driver step did not converge: {0}")]
    DriverStep(String),

    #[error("incompatible inputs: {0}")]
    Incompatible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
