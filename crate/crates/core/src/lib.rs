//! American call and put valuation on a dividend-paying geometric Brownian
//! motion through four equivalent descriptions of the value function:
//! the reflected BSDE, the non-reflected BSDE with the explicit exercise
//! driver, the obstacle PDE, and the semilinear PDE. A CRR lattice and
//! density quadrature serve as independent references.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde;
pub mod error;
pub mod lattice;
pub mod model;
pub mod pde;
pub mod quadrature;
pub mod validation;

pub use bsde::{
    doob_meyer_k, driver_bsde_solve, k_equivalence, k_formula, prop21_bound_check, skorokhod_sum, snell_lsmc,
    snell_representation_check, snell_representation_check_with, z_identification_check, BsdeMethod, BsdeSolution,
    BsdeSummary, ContactCriterion, KEquivalence, PathMatrix, PriceEstimate, Prop21Report, RegressionBasis,
    RepresentationReport, ZReport,
};
pub use error::{Error, Result};
pub use lattice::{
    american_oracle, european_delta_quadrature, european_quadrature, tree_price_american, tree_price_european,
    OracleValue, TreeConfig, ORACLE_STEPS,
};
pub use model::{
    driver_q, full_driver, payoff, simulate_paths, simulate_paths_on_stream, transition_density, EvalPoint,
    MarketParams, OptionKind, OptionSpec, PathBundle, SeedRecord, StepPolicy, TimeSchedule,
};
pub use pde::{
    eep_premium, extract_boundary, reconstruct_measure, solve_obstacle, solve_obstacle_with, solve_penalized,
    solve_semilinear, weighted_norm, BoundaryReport, GridSpec, MeasureDensity, PdeMethod, PdeSolution, PsorConfig,
    Stepping, WeightSpec,
};
pub use validation::{
    format_sig17, refinement_study, run_equivalence_suite, Check, CheckOutcome, ConfigError, ConvergenceTable,
    SuiteConfig, SuiteReport,
};
