use std::sync::Arc;

use rayon::prelude::*;

use super::lsmc::{check_inputs, european_row, z_row, StepControl};
use super::regression::{fit, mean_and_se, Fit, RegressionBasis};
use super::{BsdeMethod, BsdeSolution, PathMatrix, PriceEstimate, StepDiagnostics};
use crate::error::{Error, Result};
use crate::model::{MarketParams, OptionSpec, PathBundle};

/// Implicit step `(1 + r dt) y = a + dt q(x, y)` for the discontinuous
/// driver. With the source off the root is `a / (1 + r dt)`, with it on
/// `(a + dt rate) / (1 + r dt)`; when neither is consistent with its own
/// indicator the generalized root sits on the payoff. Returns `(y, q)`.
#[inline]
pub(crate) fn driver_step(a: f64, g: f64, rate: f64, r: f64, dt: f64) -> (f64, f64) {
    let denom = 1.0 + r * dt;
    let off = a / denom;
    let on = (a + dt * rate) / denom;
    let y = g.clamp(off, on);
    // Measured from the off root so an inactive source gives exactly zero.
    (y, (y - off) * denom / dt)
}

/// Non-reflected BSDE with the explicit exercise driver, backward Euler,
/// implicit in `Y`. The conditional mean of `Y_{k+1}` is the European
/// control variate in closed form plus an all-path regression of the
/// excess. `K` accumulates the effective driver, `q dt` per step, and the
/// standard error of `y0` is that of the pathwise representation
/// `e^{-r(T-s)} g(X_T) + sum_k e^{-r(t_k - s)} dK_k`.
pub fn driver_bsde_solve(
    paths: Arc<PathBundle>,
    spec: &OptionSpec,
    params: &MarketParams,
    basis: &RegressionBasis,
) -> Result<BsdeSolution> {
    check_inputs(&paths, spec, params, basis)?;
    let schedule = paths.schedule();
    let steps = schedule.steps();
    let times = schedule.times();
    let n = paths.n_paths();
    let r = params.rate;
    if r * schedule.max_dt() >= 1.0 {
        return Err(Error::DriverStep(format!(
            "r dt = {} must be below 1 for the implicit step to be a contraction",
            r * schedule.max_dt()
        )));
    }
    let all = RegressionBasis {
        itm_only: false,
        ..*basis
    };

    let mut y = PathMatrix::zeros(n, steps + 1);
    let mut z = PathMatrix::zeros(n, steps + 1);
    let mut inc = PathMatrix::zeros(n, steps + 1);
    let terminal: Vec<f64> = paths.slice(steps).iter().map(|&x| spec.payoff(x)).collect();
    y.row_mut(steps).copy_from_slice(&terminal);
    let mut diagnostics = Vec::with_capacity(steps);
    let mut next_euro = european_row(&paths, spec, params, steps);

    for k in (0..steps).rev() {
        let dt = schedule.dt(k);
        let xs = paths.slice(k);
        let control = StepControl {
            here: european_row(&paths, spec, params, k),
            next: next_euro,
            growth: (r * dt).exp(),
        };
        let excess: Vec<f64> = (0..n).map(|i| y.get(i, k + 1) - control.next[i].0).collect();
        let (value_fit, constant) = if k == 0 {
            (Fit::mean_only(n), Some(mean_and_se(n, |i| excess[i]).0))
        } else {
            (fit(&all, spec, xs, |i| excess[i], |_| true), None)
        };
        let centre: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| constant.unwrap_or_else(|| value_fit.eval(spec, xs[i])))
            .collect();
        let zfit = z_row(&paths, spec, params, basis, &control, &excess, &centre, k, z.row_mut(k));
        let rows: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = xs[i];
                let a = control.mean(i) + centre[i];
                let (yv, q) = driver_step(a, spec.payoff(x), spec.exercise_rate(params, x), r, dt);
                (yv, q * dt)
            })
            .collect();
        for (i, (yv, dk)) in rows.into_iter().enumerate() {
            y.row_mut(k)[i] = yv;
            inc.row_mut(k)[i] = dk;
        }
        diagnostics.push(StepDiagnostics::from_fits(
            k,
            times[k],
            &value_fit,
            &zfit,
            1.0 / (1.0 + r * dt),
        ));
        next_euro = control.here;
    }
    diagnostics.reverse();

    let s = schedule.start();
    let discount: Vec<f64> = times.iter().map(|t| (-r * (t - s)).exp()).collect();
    let (_, std_error) = mean_and_se(n, |i| {
        let mut v = discount[steps] * spec.payoff(paths.value(i, steps));
        for (k, d) in discount[..steps].iter().enumerate() {
            v += d * inc.get(i, k);
        }
        v
    });
    let y0 = PriceEstimate {
        value: y.get(0, 0),
        std_error,
    };
    Ok(BsdeSolution {
        method: BsdeMethod::DriverBsde,
        spec: *spec,
        params: *params,
        basis: *basis,
        k: PathMatrix::accumulate(&inc),
        paths,
        y,
        z,
        continuation: None,
        y0,
        y0_in_sample: None,
        y0_low_bias: None,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::driver_step;

    #[test]
    fn step_picks_the_consistent_branch() {
        let (r, dt, rate) = (0.05, 0.01, 5.0);
        // Far above the payoff: source off.
        let (y, q) = driver_step(30.0, 10.0, rate, r, dt);
        assert!((y - 30.0 / 1.0005).abs() < 1e-12 && q.abs() < 1e-9);
        // Far below: source fully on, y stays below the payoff.
        let (y, q) = driver_step(5.0, 10.0, rate, r, dt);
        assert!((y - (5.0 + 0.05) / 1.0005).abs() < 1e-12);
        assert!((q - rate).abs() < 1e-9);
        // Straddle: generalized root on the payoff with a partial rate.
        let (y, q) = driver_step(10.0 - 0.02, 10.0, rate, r, dt);
        assert_eq!(y, 10.0);
        assert!(q > 0.0 && q < rate);
    }
}
