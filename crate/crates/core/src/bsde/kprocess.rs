use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::regression::{chunked_sum, CHUNK};
use super::{BsdeSolution, PathMatrix};
use crate::error::{Error, Result};
use crate::model::{MarketParams, OptionKind, OptionSpec, PathBundle};
use crate::pde::PdeSolution;

/// Which nodes count as "on the payoff" for the explicit K integral.
#[derive(Debug, Clone, Copy)]
pub enum ContactCriterion<'a> {
    /// PDE exercise boundary at the nearest grid time.
    Pde(&'a PdeSolution),
    /// `|Y - g(X)| <= tolerance` on a strictly in-the-money node.
    Values { y: &'a PathMatrix, tolerance: f64 },
}

impl ContactCriterion<'_> {
    fn check(&self, paths: &PathBundle, spec: &OptionSpec, params: &MarketParams) -> Result<()> {
        match self {
            ContactCriterion::Pde(sol) => {
                if sol.spec != *spec || sol.params != *params {
                    return Err(Error::Incompatible(
                        "PDE contact oracle is for a different contract".into(),
                    ));
                }
                let t = paths.schedule();
                if t.start() < 0.0 || t.end() > sol.params.expiry + 1e-12 {
                    return Err(Error::Incompatible("schedule lies outside the PDE time grid".into()));
                }
            }
            ContactCriterion::Values { y, .. } => {
                if y.n_paths() != paths.n_paths() || y.n_times() != paths.n_times() {
                    return Err(Error::Incompatible(
                        "value matrix does not match the path bundle".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn in_contact(&self, spec: &OptionSpec, rows: &[Option<f64>], path: usize, k: usize, x: f64) -> bool {
        if !spec.in_the_money(x) {
            return false;
        }
        match self {
            ContactCriterion::Pde(_) => match (rows[k], spec.kind) {
                (Some(level), OptionKind::Put) => x <= level,
                (Some(level), OptionKind::Call) => x >= level,
                (None, _) => false,
            },
            ContactCriterion::Values { y, tolerance } => (y.get(path, k) - spec.payoff(x)).abs() <= *tolerance,
        }
    }

    /// PDE boundary level at each schedule time (unused for the value test).
    fn levels(&self, paths: &PathBundle) -> Vec<Option<f64>> {
        match self {
            ContactCriterion::Pde(sol) => paths
                .schedule()
                .times()
                .iter()
                .map(|&t| sol.boundary[sol.nearest_time_index(t)])
                .collect(),
            ContactCriterion::Values { .. } => vec![None; paths.n_times()],
        }
    }
}

/// `K` from continuation values: increment `(g(X_k) - C_k)^+` booked at
/// step `k`.
pub(crate) fn compensator(paths: &PathBundle, spec: &OptionSpec, cont: &PathMatrix) -> PathMatrix {
    let n = paths.n_paths();
    let mut inc = PathMatrix::zeros(n, paths.n_times());
    for k in 0..paths.n_times() - 1 {
        let xs = paths.slice(k);
        let c = cont.row(k);
        inc.row_mut(k)
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, d)| *d = (spec.payoff(xs[i]) - c[i]).max(0.0));
    }
    PathMatrix::accumulate(&inc)
}

/// Discrete Doob–Meyer compensator of the reflected solution.
pub fn doob_meyer_k(sol: &BsdeSolution, spec: &OptionSpec, params: &MarketParams) -> Result<PathMatrix> {
    if sol.spec != *spec || sol.params != *params {
        return Err(Error::Incompatible(
            "solution was computed for a different contract".into(),
        ));
    }
    let cont = sol
        .continuation
        .as_ref()
        .ok_or_else(|| Error::Incompatible("Doob–Meyer extraction needs a reflected (Snell) solution".into()))?;
    Ok(compensator(&sol.paths, spec, cont))
}

/// Explicit K: left-endpoint sum of `dt * rate(X_k) * 1{contact at (t_k, X_k)}`.
pub fn k_formula(
    paths: &PathBundle,
    spec: &OptionSpec,
    params: &MarketParams,
    contact: ContactCriterion,
) -> Result<PathMatrix> {
    contact.check(paths, spec, params)?;
    let n = paths.n_paths();
    let levels = contact.levels(paths);
    let mut inc = PathMatrix::zeros(n, paths.n_times());
    for k in 0..paths.n_times() - 1 {
        let dt = paths.schedule().dt(k);
        let xs = paths.slice(k);
        inc.row_mut(k).par_iter_mut().enumerate().for_each(|(i, d)| {
            let x = xs[i];
            if contact.in_contact(spec, &levels, i, k, x) {
                *d = dt * spec.exercise_rate(params, x);
            }
        });
    }
    Ok(PathMatrix::accumulate(&inc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop21Report {
    pub pairs: u64,
    pub violations: u64,
    pub fraction: f64,
    /// Largest excess of the K increment over the formula bound.
    pub max_violation: f64,
    pub sigmas: f64,
}

/// For every path and schedule pair `tau < t`, checks
/// `K_t - K_tau <= int_tau^t rate 1{contact} + sigmas * sqrt(sum se_k^2)`.
pub fn prop21_bound_check(
    k: &PathMatrix,
    paths: &PathBundle,
    spec: &OptionSpec,
    params: &MarketParams,
    contact: ContactCriterion,
    step_errors: &[f64],
    sigmas: f64,
) -> Result<Prop21Report> {
    if k.n_paths() != paths.n_paths() || k.n_times() != paths.n_times() {
        return Err(Error::Incompatible("K matrix does not match the path bundle".into()));
    }
    if step_errors.len() + 1 != paths.n_times() {
        return Err(Error::Incompatible(format!(
            "{} step errors for {} steps",
            step_errors.len(),
            paths.n_times() - 1
        )));
    }
    let bound = k_formula(paths, spec, params, contact)?;
    let m = paths.n_times();
    let mut var = vec![0.0; m];
    for j in 0..m - 1 {
        var[j + 1] = var[j] + step_errors[j] * step_errors[j];
    }
    let n = paths.n_paths();
    let parts: Vec<(u64, f64)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut count = 0u64;
            let mut worst = 0.0f64;
            let mut kp = vec![0.0; m];
            let mut fp = vec![0.0; m];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                for t in 0..m {
                    kp[t] = k.get(i, t);
                    fp[t] = bound.get(i, t);
                }
                for tau in 0..m {
                    for t in tau + 1..m {
                        let excess = (kp[t] - kp[tau]) - (fp[t] - fp[tau]);
                        if excess > sigmas * (var[t] - var[tau]).sqrt() {
                            count += 1;
                            worst = worst.max(excess);
                        }
                    }
                }
            }
            (count, worst)
        })
        .collect();
    let violations: u64 = parts.iter().map(|p| p.0).sum();
    let max_violation = parts.iter().map(|p| p.1).fold(0.0, f64::max);
    let pairs = n as u64 * (m * (m - 1) / 2) as u64;
    Ok(Prop21Report {
        pairs,
        violations,
        fraction: violations as f64 / pairs as f64,
        max_violation,
        sigmas,
    })
}

/// Mean over paths of `sum_k (Y_k - g(X_k)) (K_{k+1} - K_k)`.
pub fn skorokhod_sum(sol: &BsdeSolution, spec: &OptionSpec) -> f64 {
    let paths = &sol.paths;
    let n = paths.n_paths();
    let steps = paths.n_times() - 1;
    chunked_sum(n, |i| {
        (0..steps)
            .map(|k| {
                let gap = sol.y.get(i, k) - spec.payoff(paths.value(i, k));
                gap * (sol.k.get(i, k + 1) - sol.k.get(i, k))
            })
            .sum()
    }) / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KEquivalence {
    /// Mean over paths of `sup_t |K_t - K~_t|`.
    pub mean_sup_gap: f64,
    pub mean_terminal: f64,
    pub mean_terminal_formula: f64,
}

pub fn k_equivalence(k: &PathMatrix, formula: &PathMatrix) -> Result<KEquivalence> {
    if k.n_paths() != formula.n_paths() || k.n_times() != formula.n_times() {
        return Err(Error::Incompatible("K matrices have different shapes".into()));
    }
    let n = k.n_paths();
    let last = k.n_times() - 1;
    let sup = chunked_sum(n, |i| {
        (0..=last)
            .map(|t| (k.get(i, t) - formula.get(i, t)).abs())
            .fold(0.0, f64::max)
    });
    Ok(KEquivalence {
        mean_sup_gap: sup / n as f64,
        mean_terminal: chunked_sum(n, |i| k.get(i, last)) / n as f64,
        mean_terminal_formula: chunked_sum(n, |i| formula.get(i, last)) / n as f64,
    })
}
