//! Finite-difference solvers for the obstacle, penalized and semilinear
//! formulations in log-price, with boundary extraction, measure
//! reconstruction and the early-exercise premium.

mod boundary;
mod grid;
mod measure;
mod norm;
mod operator;
mod premium;
mod solution;
mod solve;
mod tridiag;

#[cfg(test)]
mod tests;

pub use boundary::{extract_boundary, BoundaryReport};
pub use grid::{GridSpec, Stepping, RANNACHER_HALF_STEPS};
pub use measure::{reconstruct_measure, MeasureDensity};
pub use norm::{weighted_norm, weighted_norm_squared, weighted_norm_surface, WeightSpec};
pub use premium::eep_premium;
pub use solution::{PdeMethod, PdeSolution, SolveDiagnostics, CONTACT_TOLERANCE};
pub use solve::{
    solve_obstacle, solve_obstacle_with, solve_penalized, solve_semilinear, PsorConfig, DAMPING,
    FIXED_POINT_MAX_ITERATIONS, FIXED_POINT_TOLERANCE, NEWTON_TOLERANCE,
};
