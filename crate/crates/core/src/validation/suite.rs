use std::cell::OnceCell;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Check, ParameterSet, SuiteConfig};
use super::format_sig17;
use crate::bsde::{
    driver_bsde_solve, prop21_bound_check, skorokhod_sum, snell_lsmc, snell_representation_check_with,
    z_identification_check, BsdeSolution, ContactCriterion, RegressionBasis, BOOTSTRAP_REPLICATES,
};
use crate::error::{Error, Result};
use crate::lattice::{american_oracle, european_quadrature};
use crate::model::{simulate_paths, EvalPoint, OptionKind, TimeSchedule};
use crate::pde::{
    eep_premium, extract_boundary, reconstruct_measure, solve_obstacle, solve_penalized, solve_semilinear,
    weighted_norm_surface, BoundaryReport, GridSpec, PdeSolution, WeightSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: Check,
    pub set: String,
    /// `None` when the computation behind the check failed.
    pub measured: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
    pub runtime_seconds: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub crate_version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
    pub debug_assertions: bool,
}

impl Fingerprint {
    pub fn current() -> Self {
        Self {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            threads: rayon::current_num_threads(),
            debug_assertions: cfg!(debug_assertions),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub passed: bool,
    pub outcomes: Vec<CheckOutcome>,
    pub environment: Fingerprint,
    pub config: SuiteConfig,
    pub runtime_seconds: f64,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.outcomes.iter().filter(|o| !o.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat `check,parameter_set,measured,tolerance,pass` table.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["check", "parameter_set", "measured", "tolerance", "pass"])?;
        for o in &self.outcomes {
            w.write_record([
                o.check.name(),
                &o.set,
                &o.measured.map(format_sig17).unwrap_or_default(),
                &format_sig17(o.tolerance),
                if o.passed { "true" } else { "false" },
            ])?;
        }
        w.flush()
    }
}

/// Runs every configured check of every parameter set. A check whose
/// computation fails is recorded as failed and the suite moves on; only an
/// invalid configuration aborts.
pub fn run_equivalence_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let start = Instant::now();
    let per_set: Vec<Vec<CheckOutcome>> = cfg.sets.par_iter().map(|set| run_set(cfg, set)).collect();
    let outcomes: Vec<CheckOutcome> = per_set.into_iter().flatten().collect();
    Ok(SuiteReport {
        passed: outcomes.iter().all(|o| o.passed),
        outcomes,
        environment: Fingerprint::current(),
        config: cfg.clone(),
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

fn run_set(cfg: &SuiteConfig, set: &ParameterSet) -> Vec<CheckOutcome> {
    let ctx = SetContext::new(cfg, set);
    set.checks
        .iter()
        .map(|&check| {
            let t = Instant::now();
            let result = ctx.run(check);
            let tolerance = cfg.tolerance(check);
            let (measured, passed, detail) = match result {
                Ok((m, detail)) => (Some(m), m <= tolerance, detail),
                Err(e) => (None, false, e.to_string()),
            };
            let outcome = CheckOutcome {
                check,
                set: set.name.clone(),
                measured,
                tolerance,
                passed,
                runtime_seconds: t.elapsed().as_secs_f64(),
                detail,
            };
            log::info!(
                "{} / {}: {} (measured {:?}, tolerance {})",
                set.name,
                check,
                if passed { "pass" } else { "FAIL" },
                measured,
                tolerance
            );
            outcome
        })
        .collect()
}

/// Shared, lazily computed inputs of one parameter set.
struct SetContext<'a> {
    cfg: &'a SuiteConfig,
    set: &'a ParameterSet,
    basis: RegressionBasis,
    oracle: Vec<OnceCell<Result<f64>>>,
    european: Vec<OnceCell<Result<f64>>>,
    obstacle: OnceCell<Result<PdeSolution>>,
    penalized: OnceCell<Result<PdeSolution>>,
    semilinear: OnceCell<Result<PdeSolution>>,
    snell: Vec<OnceCell<Result<BsdeSolution>>>,
    driver: Vec<OnceCell<Result<BsdeSolution>>>,
}

fn cached<T: Clone>(cell: &OnceCell<Result<T>>, f: impl FnOnce() -> Result<T>) -> Result<&T> {
    cell.get_or_init(f).as_ref().map_err(Clone::clone)
}

fn cells<T>(n: usize) -> Vec<OnceCell<T>> {
    (0..n).map(|_| OnceCell::new()).collect()
}

impl<'a> SetContext<'a> {
    fn new(cfg: &'a SuiteConfig, set: &'a ParameterSet) -> Self {
        let n = set.points.len();
        Self {
            cfg,
            set,
            basis: RegressionBasis::new(cfg.resolution.degree, true, true).expect("validated"),
            oracle: cells(n),
            european: cells(n),
            obstacle: OnceCell::new(),
            penalized: OnceCell::new(),
            semilinear: OnceCell::new(),
            snell: cells(n),
            driver: cells(n),
        }
    }

    fn points(&self) -> impl Iterator<Item = (usize, &EvalPoint)> {
        self.set.points.iter().enumerate()
    }

    fn grid(&self) -> Result<GridSpec> {
        let n = self.cfg.resolution.grid;
        GridSpec::for_contract(&self.set.params, &self.set.spec, n, n)
    }

    fn oracle(&self, j: usize) -> Result<f64> {
        cached(&self.oracle[j], || {
            american_oracle(
                &self.set.params,
                &self.set.spec,
                &self.set.points[j],
                self.cfg.resolution.tree_steps,
            )
            .map(|o| o.value)
        })
        .copied()
    }

    fn european(&self, j: usize) -> Result<f64> {
        cached(&self.european[j], || {
            european_quadrature(&self.set.params, &self.set.spec, &self.set.points[j])
        })
        .copied()
    }

    fn obstacle(&self) -> Result<&PdeSolution> {
        cached(&self.obstacle, || {
            solve_obstacle(&self.set.params, &self.set.spec, &self.grid()?)
        })
    }

    fn penalized(&self) -> Result<&PdeSolution> {
        cached(&self.penalized, || {
            solve_penalized(
                &self.set.params,
                &self.set.spec,
                &self.grid()?,
                self.cfg.resolution.penalty,
            )
        })
    }

    fn semilinear(&self) -> Result<&PdeSolution> {
        cached(&self.semilinear, || {
            solve_semilinear(&self.set.params, &self.set.spec, &self.grid()?)
        })
    }

    fn pde_all(&self) -> Result<[&PdeSolution; 3]> {
        Ok([self.obstacle()?, self.penalized()?, self.semilinear()?])
    }

    fn paths(&self, j: usize) -> Result<Arc<crate::model::PathBundle>> {
        let r = &self.cfg.resolution;
        let p = &self.set.points[j];
        let schedule = TimeSchedule::uniform(p.start, self.set.params.expiry, r.steps)?;
        Ok(Arc::new(simulate_paths(
            &self.set.params,
            p,
            &schedule,
            r.paths,
            self.cfg.seed,
        )?))
    }

    fn snell(&self, j: usize) -> Result<&BsdeSolution> {
        cached(&self.snell[j], || {
            snell_lsmc(self.paths(j)?, &self.set.spec, &self.set.params, &self.basis)
        })
    }

    fn driver(&self, j: usize) -> Result<&BsdeSolution> {
        cached(&self.driver[j], || {
            driver_bsde_solve(self.paths(j)?, &self.set.spec, &self.set.params, &self.basis)
        })
    }

    fn bsde_both(&self, j: usize) -> Result<[&BsdeSolution; 2]> {
        Ok([self.snell(j)?, self.driver(j)?])
    }

    fn run(&self, check: Check) -> Result<(f64, String)> {
        let spec = &self.set.spec;
        let params = &self.set.params;
        match check {
            Check::TreeAgreement => {
                let mut worst = 0.0f64;
                for (j, p) in self.points() {
                    let tree = self.oracle(j)?;
                    for sol in self.pde_all()? {
                        worst = worst.max(relative(sol.value_at(p.start, p.spot)?, tree));
                    }
                }
                Ok((worst, "max relative gap over points and PDE methods".into()))
            }
            Check::PdePairwiseSup => {
                let [a, b, c] = self.pde_all()?;
                let d = a
                    .max_abs_difference(b)?
                    .max(a.max_abs_difference(c)?)
                    .max(b.max_abs_difference(c)?);
                Ok((d / spec.strike, format!("max pairwise sup gap {d:e}")))
            }
            Check::PdePairwiseWeighted => {
                let w = WeightSpec::new(self.cfg.resolution.weight_alpha)?;
                let [a, b, c] = self.pde_all()?;
                let norm = |u: &[f64]| weighted_norm_surface(&a.times, &a.nodes, u, &w);
                let scale = norm(&a.u)?;
                let mut worst = 0.0f64;
                for (x, y) in [(a, b), (a, c), (b, c)] {
                    let diff: Vec<f64> = x.u.iter().zip(&y.u).map(|(p, q)| p - q).collect();
                    worst = worst.max(norm(&diff)?);
                }
                Ok((
                    if scale > 0.0 { worst / scale } else { worst },
                    format!("alpha = {}", w.alpha),
                ))
            }
            Check::EuropeanCollapsePde => {
                let mut worst = 0.0f64;
                let band = params.sigma * params.expiry.sqrt();
                let pdes = self.pde_all()?;
                for (_, p) in self.points() {
                    let k = pdes[0].nearest_time_index(p.start);
                    let t = pdes[0].times[k];
                    for (i, &x) in pdes[0].nodes.iter().enumerate() {
                        if (x / spec.strike).ln().abs() > band {
                            continue;
                        }
                        let e = european_quadrature(params, spec, &EvalPoint::new(t, x)?)?;
                        for sol in pdes {
                            worst = worst.max(relative(sol.value(k, i), e));
                        }
                    }
                }
                Ok((worst, "nodes within one standard deviation of the strike".into()))
            }
            Check::EuropeanCollapseMc => {
                let mut worst = 0.0f64;
                for (j, _) in self.points() {
                    let e = self.european(j)?;
                    for sol in self.bsde_both(j)? {
                        worst = worst.max(z_score(sol.y0.value, sol.y0.std_error, e));
                    }
                }
                Ok((worst, "max |z| of both schemes".into()))
            }
            Check::BsdeVsPde => {
                let mut worst = 0.0f64;
                let mut detail = Vec::new();
                for (j, p) in self.points() {
                    let v = self.obstacle()?.value_at(p.start, p.spot)?;
                    // The PDE's own gap to the tree counts as a second error
                    // source; it matters only when the Monte Carlo price is
                    // exact (immediate exercise).
                    let pde_error = (v - self.oracle(j)?).abs();
                    for sol in self.bsde_both(j)? {
                        let se = sol.y0.std_error.hypot(pde_error);
                        let z = z_score(sol.y0.value, se, v);
                        detail.push(format!("{}@{}: z = {z:.2}", sol.method, p.spot));
                        worst = worst.max(z);
                    }
                }
                Ok((worst, detail.join("; ")))
            }
            Check::Prop21 => {
                let mut worst = 0.0f64;
                let pde = self.obstacle()?;
                for (j, _) in self.points() {
                    let sol = self.snell(j)?;
                    let report = prop21_bound_check(
                        &sol.k,
                        &sol.paths,
                        spec,
                        params,
                        ContactCriterion::Pde(pde),
                        &sol.step_errors(),
                        self.cfg.resolution.bound_sigmas,
                    )?;
                    worst = worst.max(report.fraction);
                }
                Ok((worst, "largest violating fraction over points".into()))
            }
            Check::Skorokhod => {
                let mut worst = 0.0f64;
                for (j, _) in self.points() {
                    let sol = self.snell(j)?;
                    let sum = skorokhod_sum(sol, spec).abs();
                    let last = sol.k.n_times() - 1;
                    let mean_k = sol.k.row(last).iter().sum::<f64>() / sol.k.n_paths() as f64;
                    let scale = spec.strike * if mean_k > 0.0 { mean_k } else { 1.0 };
                    worst = worst.max(sum / scale);
                }
                Ok((worst, "normalised by K E[K_T]".into()))
            }
            Check::PremiumDecomposition => {
                let boundary = self.boundary()?;
                let mut worst = 0.0f64;
                for (j, p) in self.points() {
                    let v = self.european(j)? + eep_premium(params, spec, p, &boundary)?;
                    worst = worst.max(relative(v, self.oracle(j)?));
                }
                Ok((worst, "European quadrature plus premium against the tree".into()))
            }
            Check::MeasureIdentity => {
                let m = reconstruct_measure(self.obstacle()?, params, spec)?;
                Ok((m.discrepancy, format!("{} interior cells", m.interior_cells)))
            }
            Check::BoundaryStructure => match extract_boundary(self.obstacle()?) {
                Ok(report) => {
                    let bad = monotonicity_breaks(&report, spec.strike);
                    Ok((bad as f64, format!("{bad} non-monotone time slices")))
                }
                Err(Error::StructuralViolation { count, first_time, .. }) => Ok((
                    count as f64,
                    format!("{count} slices with a broken contact set, first at t = {first_time}"),
                )),
                Err(e) => Err(e),
            },
            Check::ZIdentification => {
                let mut worst = 0.0f64;
                for (j, _) in self.points() {
                    let report = z_identification_check(self.snell(j)?, self.obstacle()?)?;
                    worst = worst.max(report.relative_l2);
                }
                Ok((worst, "reflected scheme".into()))
            }
            Check::Representation => {
                let mut worst = 0.0f64;
                for (j, _) in self.points() {
                    let report = snell_representation_check_with(
                        self.driver(j)?,
                        spec,
                        params,
                        &self.basis,
                        BOOTSTRAP_REPLICATES,
                        self.cfg.tolerance(Check::Representation),
                    )?;
                    worst = worst.max(report.max_abs_z);
                }
                Ok((
                    worst,
                    format!("{BOOTSTRAP_REPLICATES} bootstrap replicates, driver scheme"),
                ))
            }
        }
    }

    fn boundary(&self) -> Result<BoundaryReport> {
        extract_boundary(self.obstacle()?)
    }
}

fn relative(value: f64, reference: f64) -> f64 {
    let diff = (value - reference).abs();
    if reference.abs() > 0.0 {
        diff / reference.abs()
    } else {
        diff
    }
}

fn z_score(value: f64, se: f64, target: f64) -> f64 {
    let diff = (value - target).abs();
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Put boundaries may only rise toward expiry and call boundaries only
/// fall; counts the slices that move the wrong way.
pub(crate) fn monotonicity_breaks(report: &BoundaryReport, strike: f64) -> usize {
    let slack = 1e-12 * strike;
    let levels: Vec<f64> = report.levels.iter().flatten().copied().collect();
    levels
        .windows(2)
        .filter(|w| match report.kind {
            OptionKind::Put => w[1] < w[0] - slack,
            OptionKind::Call => w[1] > w[0] + slack,
        })
        .count()
}
