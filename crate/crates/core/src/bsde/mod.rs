//! Monte Carlo schemes for the reflected BSDE (Snell envelope by
//! least-squares regression) and the non-reflected BSDE with the explicit
//! exercise driver, plus the K-process and representation diagnostics.

mod checks;
mod driver;
mod kprocess;
mod lsmc;
mod onestep;
mod regression;


use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::{MarketParams, OptionSpec, PathBundle, SeedRecord};

pub use checks::{
    snell_representation_check, snell_representation_check_with, z_identification_check, ProbeResult,
    RepresentationReport, ZReport, BOOTSTRAP_REPLICATES,
};
pub use driver::driver_bsde_solve;
pub use kprocess::{
    doob_meyer_k, k_equivalence, k_formula, prop21_bound_check, skorokhod_sum, ContactCriterion, KEquivalence,
    Prop21Report,
};
pub use lsmc::{snell_lsmc, LOW_BIAS_STREAM_OFFSET};
pub use regression::{Columns, Fit, RegressionBasis};

/// Per-path processes stored time-major: row `k` holds every path at `t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMatrix {
    n_paths: usize,
    n_times: usize,
    data: Vec<f64>,
}

impl PathMatrix {
    pub fn zeros(n_paths: usize, n_times: usize) -> Self {
        Self {
            n_paths,
            n_times,
            data: vec![0.0; n_paths * n_times],
        }
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.n_paths..(k + 1) * self.n_paths]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.n_paths..(k + 1) * self.n_paths]
    }

    #[inline]
    pub fn get(&self, path: usize, k: usize) -> f64 {
        self.data[k * self.n_paths + path]
    }

    pub fn path(&self, path: usize) -> Vec<f64> {
        (0..self.n_times).map(|k| self.get(path, k)).collect()
    }

    /// Running sums of per-step increments: row 0 is zero and row `k + 1`
    /// adds `increments.row(k)`.
    pub(crate) fn accumulate(increments: &PathMatrix) -> PathMatrix {
        let mut out = PathMatrix::zeros(increments.n_paths, increments.n_times);
        for k in 0..increments.n_times - 1 {
            let (head, tail) = out.data.split_at_mut((k + 1) * increments.n_paths);
            let prev = &head[k * increments.n_paths..];
            for ((next, p), d) in tail[..increments.n_paths].iter_mut().zip(prev).zip(increments.row(k)) {
                *next = p + d;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BsdeMethod {
    ReflectedSnell,
    DriverBsde,
}

impl fmt::Display for BsdeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BsdeMethod::ReflectedSnell => "reflected-snell",
            BsdeMethod::DriverBsde => "driver-bsde",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Regression quality at one backward step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub samples: usize,
    pub degree: usize,
    pub payoff_column: bool,
    pub condition: f64,
    pub r_squared: f64,
    pub residual_se: f64,
    /// Standard error of a fitted value, in price units at `t_k`.
    pub fitted_se: f64,
    pub z_r_squared: f64,
}

impl StepDiagnostics {
    pub(crate) fn from_fits(step: usize, time: f64, value: &Fit, z: &Fit, scale: f64) -> Self {
        Self {
            step,
            time,
            samples: value.samples,
            degree: value.columns.degree,
            payoff_column: value.columns.payoff,
            condition: value.condition,
            r_squared: value.r_squared,
            residual_se: value.residual_se * scale,
            fitted_se: value.fitted_se() * scale,
            z_r_squared: z.r_squared,
        }
    }
}

/// Discrete `(Y, Z, K)` on a path bundle. `K` starts at zero and row `k + 1`
/// includes the increment booked at `t_k`.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub method: BsdeMethod,
    pub spec: OptionSpec,
    pub params: MarketParams,
    pub basis: RegressionBasis,
    pub paths: Arc<PathBundle>,
    pub y: PathMatrix,
    pub z: PathMatrix,
    pub k: PathMatrix,
    /// Pre-reflection continuation values (reflected scheme only).
    pub continuation: Option<PathMatrix>,
    pub y0: PriceEstimate,
    pub y0_in_sample: Option<PriceEstimate>,
    pub y0_low_bias: Option<PriceEstimate>,
    /// Entry `k` describes the regression at step `k` (none at `k = 0`).
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Serializable run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsdeSummary {
    pub method: BsdeMethod,
    pub n_paths: usize,
    pub steps: usize,
    pub seed: SeedRecord,
    pub y0: PriceEstimate,
    pub y0_in_sample: Option<PriceEstimate>,
    pub y0_low_bias: Option<PriceEstimate>,
    pub mean_k_terminal: f64,
    pub max_condition: f64,
    pub min_r_squared: f64,
}

impl BsdeSolution {
    pub fn steps(&self) -> usize {
        self.paths.schedule().steps()
    }

    /// Per-step standard error of the reflection increment.
    pub fn step_errors(&self) -> Vec<f64> {
        let mut se = vec![0.0; self.steps()];
        for d in &self.diagnostics {
            if d.step < se.len() {
                se[d.step] = d.fitted_se;
            }
        }
        se
    }

    pub fn summary(&self) -> BsdeSummary {
        let last = self.k.row(self.k.n_times() - 1);
        let mean_k = regression::chunked_sum(last.len(), |i| last[i]) / last.len() as f64;
        BsdeSummary {
            method: self.method,
            n_paths: self.paths.n_paths(),
            steps: self.steps(),
            seed: self.paths.seed(),
            y0: self.y0,
            y0_in_sample: self.y0_in_sample,
            y0_low_bias: self.y0_low_bias,
            mean_k_terminal: mean_k,
            max_condition: self.diagnostics.iter().map(|d| d.condition).fold(1.0, f64::max),
            min_r_squared: self.diagnostics.iter().map(|d| d.r_squared).fold(1.0, f64::min),
        }
    }
}
