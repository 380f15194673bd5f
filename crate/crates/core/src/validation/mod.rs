//! Cross-method consistency suite and refinement studies, with JSON and
//! CSV reports.

mod config;
mod refinement;
mod suite;


pub use config::{Check, ConfigError, Ladders, MonteCarloRung, ParameterSet, Resolution, SuiteConfig};
pub use refinement::{grid_study, k_study, path_study, penalty_study, refinement_study, ConvergenceTable, Rung, Study};
pub use suite::{run_equivalence_suite, CheckOutcome, Fingerprint, SuiteReport};

/// Float with 17 significant digits, enough to round-trip any `f64`.
pub fn format_sig17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}
