use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ParameterSet, SuiteConfig};
use crate::bsde::{
    doob_meyer_k, k_equivalence, k_formula, prop21_bound_check, snell_lsmc, ContactCriterion, RegressionBasis,
};
use crate::error::{invalid, Result};
use crate::lattice::american_oracle;
use crate::model::{simulate_paths, TimeSchedule};
use crate::pde::{solve_obstacle, solve_penalized, GridSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    /// Refinement parameter of the rung (mesh step, `1/n`, `1/paths`, ...).
    pub parameter: f64,
    pub error: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub name: String,
    pub set: String,
    pub parameter: String,
    pub error: String,
    pub rungs: Vec<Rung>,
    /// Least-squares slope of `ln error` against `ln parameter`.
    pub fitted_order: Option<f64>,
    pub monotone: bool,
    /// Rungs whose error did not fall below the previous one.
    pub flagged: Vec<usize>,
}

impl Study {
    fn new(name: &str, set: &ParameterSet, parameter: &str, error: &str, rungs: Vec<Rung>, floor: f64) -> Self {
        let flagged: Vec<usize> = (1..rungs.len())
            .filter(|&i| {
                let (a, b) = (rungs[i - 1].error, rungs[i].error);
                // Two rungs already at rounding level count as converged.
                b >= a && b > floor
            })
            .collect();
        if !flagged.is_empty() {
            log::warn!("{}/{name}: error not decreasing at rungs {flagged:?}", set.name);
        }
        Self {
            name: name.into(),
            set: set.name.clone(),
            parameter: parameter.into(),
            error: error.into(),
            fitted_order: fitted_order(&rungs),
            monotone: flagged.is_empty(),
            flagged,
            rungs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub studies: Vec<Study>,
    pub monotone: bool,
    pub runtime_seconds: f64,
}

fn fitted_order(rungs: &[Rung]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rungs
        .iter()
        .filter(|r| r.error > 0.0 && r.parameter > 0.0)
        .map(|r| (r.parameter.ln(), r.error.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn check_ladder(name: &'static str, len: usize) -> Result<()> {
    if len < 3 {
        return Err(invalid(name, "refinement needs at least three rungs"));
    }
    Ok(())
}

/// Obstacle PDE on the grid ladder against the tree oracle at the set's
/// first point. The mesh parameter is the time step `T / n`, which
/// dominates the implicit Euler error on an `n x n` grid.
pub fn grid_study(cfg: &SuiteConfig, set: &ParameterSet) -> Result<Study> {
    check_ladder("ladders.grid", cfg.ladders.grid.len())?;
    let p = &set.points[0];
    let tree = american_oracle(&set.params, &set.spec, p, cfg.resolution.tree_steps)?.value;
    let mut rungs = Vec::new();
    for &n in &cfg.ladders.grid {
        let grid = GridSpec::for_contract(&set.params, &set.spec, n, n)?;
        let v = solve_obstacle(&set.params, &set.spec, &grid)?.value_at(p.start, p.spot)?;
        rungs.push(Rung {
            parameter: set.params.expiry / n as f64,
            error: (v - tree).abs(),
            extras: BTreeMap::from([("price".into(), v), ("oracle".into(), tree)]),
        });
    }
    Ok(Study::new(
        "obstacle_grid",
        set,
        "time step",
        "absolute error vs tree oracle",
        rungs,
        1e-12 * set.spec.strike,
    ))
}

/// Penalized solutions on the penalty ladder against the obstacle solution
/// on the suite grid. Extras carry the undershoot `max (g - u_n)^+` and
/// `n` times it, whose stability is the `C / n` law.
pub fn penalty_study(cfg: &SuiteConfig, set: &ParameterSet) -> Result<Study> {
    check_ladder("ladders.penalty", cfg.ladders.penalty.len())?;
    let n = cfg.resolution.grid;
    let grid = GridSpec::for_contract(&set.params, &set.spec, n, n)?;
    let obstacle = solve_obstacle(&set.params, &set.spec, &grid)?;
    let mut rungs = Vec::new();
    for &penalty in &cfg.ladders.penalty {
        let sol = solve_penalized(&set.params, &set.spec, &grid, penalty)?;
        let undershoot = sol.diagnostics.max_undershoot;
        rungs.push(Rung {
            parameter: 1.0 / penalty,
            error: obstacle.max_abs_difference(&sol)?,
            extras: BTreeMap::from([
                ("undershoot".into(), undershoot),
                ("undershoot_constant".into(), penalty * undershoot),
            ]),
        });
    }
    Ok(Study::new(
        "penalty",
        set,
        "1 / penalty",
        "sup distance to the obstacle solution",
        rungs,
        1e-12 * set.spec.strike,
    ))
}

/// Standard error of the low-bias reflected price on the path ladder.
pub fn path_study(cfg: &SuiteConfig, set: &ParameterSet) -> Result<Study> {
    check_ladder("ladders.paths", cfg.ladders.paths.len())?;
    let p = &set.points[0];
    let basis = RegressionBasis::new(cfg.resolution.degree, true, true)?;
    let schedule = TimeSchedule::uniform(p.start, set.params.expiry, cfg.resolution.steps)?;
    let mut rungs = Vec::new();
    for &n in &cfg.ladders.paths {
        let paths = Arc::new(simulate_paths(&set.params, p, &schedule, n, cfg.seed)?);
        let sol = snell_lsmc(paths, &set.spec, &set.params, &basis)?;
        rungs.push(Rung {
            parameter: 1.0 / n as f64,
            error: sol.y0.std_error,
            extras: BTreeMap::from([("price".into(), sol.y0.value)]),
        });
    }
    Ok(Study::new(
        "lsmc_standard_error",
        set,
        "1 / paths",
        "standard error of y0",
        rungs,
        0.0,
    ))
}

/// Mean pathwise sup gap between the Doob–Meyer K of the reflected scheme
/// and the explicit K (PDE contact set) under joint path/step refinement.
/// Extras carry the K-bound violation fraction and both terminal means.
pub fn k_study(cfg: &SuiteConfig, set: &ParameterSet) -> Result<Study> {
    check_ladder("ladders.joint", cfg.ladders.joint.len())?;
    let p = &set.points[0];
    let basis = RegressionBasis::new(cfg.resolution.degree, true, true)?;
    let n = cfg.resolution.grid;
    let grid = GridSpec::for_contract(&set.params, &set.spec, n, n)?;
    let pde = solve_obstacle(&set.params, &set.spec, &grid)?;
    let mut rungs = Vec::new();
    for rung in &cfg.ladders.joint {
        let schedule = TimeSchedule::uniform(p.start, set.params.expiry, rung.steps)?;
        let paths = Arc::new(simulate_paths(&set.params, p, &schedule, rung.paths, cfg.seed)?);
        let sol = snell_lsmc(paths.clone(), &set.spec, &set.params, &basis)?;
        let k_dm = doob_meyer_k(&sol, &set.spec, &set.params)?;
        let k_f = k_formula(&paths, &set.spec, &set.params, ContactCriterion::Pde(&pde))?;
        let eq = k_equivalence(&k_dm, &k_f)?;
        let bound = prop21_bound_check(
            &k_dm,
            &paths,
            &set.spec,
            &set.params,
            ContactCriterion::Pde(&pde),
            &sol.step_errors(),
            cfg.resolution.bound_sigmas,
        )?;
        rungs.push(Rung {
            parameter: schedule.max_dt(),
            error: eq.mean_sup_gap,
            extras: BTreeMap::from([
                ("paths".into(), rung.paths as f64),
                ("steps".into(), rung.steps as f64),
                ("prop21_fraction".into(), bound.fraction),
                ("mean_k_terminal".into(), eq.mean_terminal),
                ("mean_k_formula_terminal".into(), eq.mean_terminal_formula),
            ]),
        });
    }
    Ok(Study::new(
        "k_equivalence",
        set,
        "time step",
        "mean pathwise sup |K_dm - K_formula|",
        rungs,
        1e-9 * set.spec.strike,
    ))
}

/// All four studies for every parameter set, at each set's first point.
pub fn refinement_study(cfg: &SuiteConfig) -> Result<ConvergenceTable> {
    cfg.validate()?;
    let start = Instant::now();
    let mut studies = Vec::new();
    for set in &cfg.sets {
        studies.push(grid_study(cfg, set)?);
        studies.push(penalty_study(cfg, set)?);
        studies.push(path_study(cfg, set)?);
        studies.push(k_study(cfg, set)?);
    }
    Ok(ConvergenceTable {
        monotone: studies.iter().all(|s| s.monotone),
        studies,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}
