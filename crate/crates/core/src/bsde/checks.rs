use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::regression::{chunked_sum, fit, Columns, RegressionBasis};
use super::BsdeSolution;
use crate::error::{Error, Result};
use crate::model::{MarketParams, OptionSpec};
use crate::pde::PdeSolution;

pub const BOOTSTRAP_REPLICATES: usize = 100;
const BOOTSTRAP_STREAM: u64 = 0xB007;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub step: usize,
    pub time: f64,
    /// Mean of `e^{-r(t-s)} Y_t` over paths.
    pub lhs_mean: f64,
    /// Mean of the pathwise right side.
    pub rhs_mean: f64,
    /// Empirical L2 distance between the regressed right side and the left side.
    pub l2_residual: f64,
    pub relative_residual: f64,
    /// `mean(D phi_m(X_t))` for each basis function, `D = rhs - lhs`.
    pub moments: Vec<f64>,
    pub bootstrap_se: Vec<f64>,
    pub max_abs_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationReport {
    pub probes: Vec<ProbeResult>,
    pub replicates: usize,
    pub sigmas: f64,
    pub max_abs_z: f64,
    pub passed: bool,
}

/// [`snell_representation_check_with`] with 100 bootstrap replicates and a
/// 3-sigma threshold.
pub fn snell_representation_check(
    sol: &BsdeSolution,
    spec: &OptionSpec,
    params: &MarketParams,
    basis: &RegressionBasis,
) -> Result<RepresentationReport> {
    snell_representation_check_with(sol, spec, params, basis, BOOTSTRAP_REPLICATES, 3.0)
}

/// Checks that the discounted value equals the conditional mean of the
/// discounted terminal payoff plus the discounted driver integral, at
/// probe steps `0, N/4, N/2, 3N/4, N`. The driver integral is read off `K`
/// (`dK = q dt`). The conditional-mean identity is tested through the
/// moments `E[D phi_m(X_t)] = 0`, each scored against its bootstrap
/// standard error over path resamples.
pub fn snell_representation_check_with(
    sol: &BsdeSolution,
    spec: &OptionSpec,
    params: &MarketParams,
    basis: &RegressionBasis,
    replicates: usize,
    sigmas: f64,
) -> Result<RepresentationReport> {
    basis.validate()?;
    if sol.spec != *spec || sol.params != *params {
        return Err(Error::Incompatible(
            "solution was computed for a different contract".into(),
        ));
    }
    if replicates < 2 {
        return Err(crate::error::invalid(
            "replicates",
            "need at least two bootstrap replicates",
        ));
    }
    let paths = &sol.paths;
    let schedule = paths.schedule();
    let steps = schedule.steps();
    let times = schedule.times();
    let n = paths.n_paths();
    let s = schedule.start();
    let r = params.rate;
    let discount: Vec<f64> = times.iter().map(|t| (-r * (t - s)).exp()).collect();

    let mut probe_steps = vec![0, steps / 4, steps / 2, 3 * steps / 4, steps];
    probe_steps.dedup();

    // Pathwise right side at every probe, built backward in one sweep.
    let terminal: Vec<f64> = (0..n)
        .map(|i| discount[steps] * spec.payoff(paths.value(i, steps)))
        .collect();
    let mut rhs = terminal;
    let mut at_probe = Vec::with_capacity(probe_steps.len());
    let mut next_probe = probe_steps.len();
    for k in (0..=steps).rev() {
        if k < steps {
            let dk = |i: usize| sol.k.get(i, k + 1) - sol.k.get(i, k);
            rhs.par_iter_mut()
                .enumerate()
                .for_each(|(i, v)| *v += discount[k] * dk(i));
        }
        if next_probe > 0 && probe_steps[next_probe - 1] == k {
            at_probe.push((k, rhs.clone()));
            next_probe -= 1;
        }
    }
    at_probe.reverse();

    let columns = Columns {
        degree: basis.degree,
        payoff: basis.include_payoff,
    };
    let p = basis.columns();
    let all = RegressionBasis {
        itm_only: false,
        ..*basis
    };
    let mut probes = Vec::with_capacity(at_probe.len());
    for (k, rhs) in at_probe {
        let xs = paths.slice(k);
        let lhs: Vec<f64> = sol.y.row(k).iter().map(|y| discount[k] * y).collect();
        let d: Vec<f64> = rhs.iter().zip(&lhs).map(|(a, b)| a - b).collect();
        let phi: Vec<f64> = {
            let mut out = vec![0.0; n * p];
            out.par_chunks_mut(p)
                .enumerate()
                .for_each(|(i, row)| columns.fill(spec, xs[i], row));
            out
        };
        let moment = |m: usize, idx: &dyn Fn(usize) -> usize| -> f64 {
            let mut acc = 0.0;
            for j in 0..n {
                let i = idx(j);
                acc += d[i] * phi[i * p + m];
            }
            acc / n as f64
        };
        let moments: Vec<f64> = (0..p).map(|m| moment(m, &|j| j)).collect();
        let boot: Vec<Vec<f64>> = (0..replicates)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(paths.seed().seed ^ BOOTSTRAP_STREAM);
                rng.set_stream((k * replicates + b) as u64);
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                (0..p).map(|m| moment(m, &|j| idx[j])).collect()
            })
            .collect();
        let bootstrap_se: Vec<f64> = (0..p)
            .map(|m| {
                let mean = boot.iter().map(|v| v[m]).sum::<f64>() / replicates as f64;
                let var = boot.iter().map(|v| (v[m] - mean).powi(2)).sum::<f64>() / (replicates - 1) as f64;
                var.sqrt()
            })
            .collect();
        let max_abs_z = moments
            .iter()
            .zip(&bootstrap_se)
            .map(|(m, se)| if *se > 0.0 { (m / se).abs() } else { 0.0 })
            .fold(0.0, f64::max);

        let fitted: Vec<f64> = if k == steps {
            rhs.clone()
        } else if k == 0 {
            vec![chunked_sum(n, |i| rhs[i]) / n as f64; n]
        } else {
            let f = fit(&all, spec, xs, |i| rhs[i], |_| true);
            xs.iter().map(|&x| f.eval(spec, x)).collect()
        };
        let sq = chunked_sum(n, |i| (fitted[i] - lhs[i]).powi(2)) / n as f64;
        let scale = chunked_sum(n, |i| lhs[i] * lhs[i]) / n as f64;
        probes.push(ProbeResult {
            step: k,
            time: times[k],
            lhs_mean: chunked_sum(n, |i| lhs[i]) / n as f64,
            rhs_mean: chunked_sum(n, |i| rhs[i]) / n as f64,
            l2_residual: sq.sqrt(),
            relative_residual: if scale > 0.0 { (sq / scale).sqrt() } else { 0.0 },
            moments,
            bootstrap_se,
            max_abs_z,
        });
    }
    let max_abs_z = probes.iter().map(|p| p.max_abs_z).fold(0.0, f64::max);
    Ok(RepresentationReport {
        probes,
        replicates,
        sigmas,
        max_abs_z,
        passed: max_abs_z <= sigmas,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZReport {
    pub relative_l2: f64,
    pub samples: usize,
    /// Path nodes outside the PDE grid, left out of the comparison.
    pub skipped: usize,
}

/// Relative L2 distance, over paths and non-terminal steps, between the
/// regressed `Z` and `sigma x du/dx` from the PDE surface.
pub fn z_identification_check(sol: &BsdeSolution, pde: &PdeSolution) -> Result<ZReport> {
    if sol.spec != pde.spec || sol.params != pde.params {
        return Err(Error::Incompatible(
            "BSDE and PDE solutions are for different contracts".into(),
        ));
    }
    let paths = &sol.paths;
    let times = paths.schedule().times();
    let n = paths.n_paths();
    let per_step: Vec<(f64, f64, usize, usize)> = (0..paths.n_times() - 1)
        .into_par_iter()
        .map(|k| {
            let (mut num, mut den, mut used, mut skipped) = (0.0, 0.0, 0, 0);
            for i in 0..n {
                match pde.log_gradient_at(times[k], paths.value(i, k)) {
                    Ok(zp) => {
                        num += (sol.z.get(i, k) - zp).powi(2);
                        den += zp * zp;
                        used += 1;
                    }
                    Err(_) => skipped += 1,
                }
            }
            (num, den, used, skipped)
        })
        .collect();
    let num: f64 = per_step.iter().map(|s| s.0).sum();
    let den: f64 = per_step.iter().map(|s| s.1).sum();
    Ok(ZReport {
        relative_l2: if den > 0.0 { (num / den).sqrt() } else { num.sqrt() },
        samples: per_step.iter().map(|s| s.2).sum(),
        skipped: per_step.iter().map(|s| s.3).sum(),
    })
}
