use std::sync::Arc;

use rayon::prelude::*;

use super::onestep::{european, expected_payoff};
use super::regression::{fit, mean_and_se, Fit, RegressionBasis};
use super::{BsdeMethod, BsdeSolution, PathMatrix, PriceEstimate, StepDiagnostics};
use crate::error::{invalid, Error, Result};
use crate::model::{simulate_paths_on_stream, EvalPoint, MarketParams, OptionSpec, PathBundle, PATH_BLOCK_SIZE};

/// Stream offset of the independent path set used by the low-bias estimator.
pub const LOW_BIAS_STREAM_OFFSET: u64 = 1 << 32;
const LOW_BIAS_BLOCKS_PER_BATCH: usize = 64;

pub(crate) fn check_inputs(
    paths: &PathBundle,
    spec: &OptionSpec,
    params: &MarketParams,
    basis: &RegressionBasis,
) -> Result<()> {
    basis.validate()?;
    if paths.params() != params {
        return Err(Error::Incompatible(
            "paths were simulated under different market parameters".into(),
        ));
    }
    if paths.n_paths() < 2 {
        return Err(invalid("n_paths", "need at least two paths"));
    }
    if !spec.strike.is_finite() {
        return Err(invalid("strike", "must be finite"));
    }
    Ok(())
}

/// European value and `x`-derivative at every path of step `k`.
pub(crate) fn european_row(paths: &PathBundle, spec: &OptionSpec, params: &MarketParams, k: usize) -> Vec<(f64, f64)> {
    let t = paths.schedule().times()[k];
    paths
        .slice(k)
        .par_iter()
        .map(|&x| european(params, spec, t, x))
        .collect()
}

/// Control-variate bookkeeping for one backward step. The regressions act
/// on `Y_{k+1} - h_{k+1}(X_{k+1})`, the excess over the European value,
/// whose conditional mean is smooth; the European part is added back in
/// closed form.
pub(crate) struct StepControl {
    /// `h_{k+1}(X_{k+1})` per path.
    pub next: Vec<(f64, f64)>,
    /// `h_k(X_k)` per path.
    pub here: Vec<(f64, f64)>,
    /// `e^{r dt}`, so `E[h_{k+1} | X_k] = growth * h_k`.
    pub growth: f64,
}

impl StepControl {
    #[inline]
    pub fn mean(&self, i: usize) -> f64 {
        self.growth * self.here[i].0
    }

    /// `sigma x d/dx E[h_{k+1}(X_{k+1}) | X_k = x]`.
    #[inline]
    pub fn slope(&self, sigma: f64, x: f64, i: usize) -> f64 {
        sigma * x * self.growth * self.here[i].1
    }
}

/// `Z_k`: the European part `sigma x d/dx E[h_{k+1} | X_k]` in closed form
/// plus a regression of `(e_{k+1} - centre) dW_k / dt` on all paths (a
/// plain mean at `k = 0`), where `e_{k+1}` is the excess over the European
/// value and `centre` its fitted conditional mean. Subtracting the centre
/// leaves the conditional mean unchanged and removes most of the variance.
#[allow(clippy::too_many_arguments)]
pub(crate) fn z_row(
    paths: &PathBundle,
    spec: &OptionSpec,
    params: &MarketParams,
    basis: &RegressionBasis,
    control: &StepControl,
    excess_next: &[f64],
    centre: &[f64],
    k: usize,
    out: &mut [f64],
) -> Fit {
    let xs = paths.slice(k);
    let dt = paths.schedule().dt(k);
    let target = |i: usize| (excess_next[i] - centre[i]) * paths.brownian_increment(i, k) / dt;
    let all = RegressionBasis {
        itm_only: false,
        ..*basis
    };
    let (zfit, constant) = if k == 0 {
        (Fit::mean_only(xs.len()), Some(mean_and_se(xs.len(), target).0))
    } else {
        (fit(&all, spec, xs, target, |_| true), None)
    };
    out.par_iter_mut().enumerate().for_each(|(i, z)| {
        let x = xs[i];
        *z = control.slope(params.sigma, x, i) + constant.unwrap_or_else(|| zfit.eval(spec, x));
    });
    zfit
}

/// Reflected BSDE by least-squares Monte Carlo. Realised cash flows of
/// the fitted stopping rule are regressed on the basis at every step, as
/// an excess over the European value `h` (whose conditional mean is known
/// in closed form). The in-the-money fit gives both the stopping rule and
/// the continuation value `C_k` on in-the-money nodes; an all-path fit of
/// the same target covers the rest. `C_k` is floored at the discounted
/// one-step expected payoff, which the American value always dominates.
/// `Y_k = max(g, C_k)` and the discrete Doob–Meyer increment is
/// `(g - C_k)^+`. The in-sample `Y_0` is reported alongside the low-bias
/// estimate of the fitted stopping rule on an independent path set, which
/// is the primary `y0`.
pub fn snell_lsmc(
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

    let mut y = PathMatrix::zeros(n, steps + 1);
    let mut z = PathMatrix::zeros(n, steps + 1);
    let mut cont = PathMatrix::zeros(n, steps + 1);
    let terminal: Vec<f64> = paths.slice(steps).iter().map(|&x| spec.payoff(x)).collect();
    y.row_mut(steps).copy_from_slice(&terminal);
    cont.row_mut(steps).copy_from_slice(&terminal);
    let mut cash = terminal;
    let mut stops: Vec<Option<Fit>> = vec![None; steps];
    let mut diagnostics = Vec::with_capacity(steps);
    let all_paths = RegressionBasis {
        itm_only: false,
        ..*basis
    };
    let keep = |xs: &[f64], i: usize| !basis.itm_only || spec.in_the_money(xs[i]);
    let mut next_euro = european_row(&paths, spec, params, steps);

    for k in (0..steps).rev() {
        let dt = schedule.dt(k);
        let disc = (-r * dt).exp();
        let xs = paths.slice(k);
        let control = StepControl {
            here: european_row(&paths, spec, params, k),
            next: next_euro,
            growth: 1.0 / disc,
        };
        let excess: Vec<f64> = (0..n).map(|i| y.get(i, k + 1) - control.next[i].0).collect();
        let cash_excess: Vec<f64> = (0..n).map(|i| cash[i] - control.next[i].0).collect();

        if k == 0 {
            // Every path starts from the same point: regressions are means.
            let g0 = spec.payoff(xs[0]);
            let (stop0, stop_se) = mean_and_se(n, |i| cash_excess[i]);
            let floor = disc * expected_payoff(params, spec, xs[0], dt).0;
            let c0 = (disc * (control.mean(0) + stop0.max(0.0))).max(floor);
            let exercise0 = spec.in_the_money(xs[0]) && g0 >= c0;
            let y0_value = g0.max(c0);
            let (excess0, _) = mean_and_se(n, |i| excess[i]);
            let zfit = z_row(
                &paths,
                spec,
                params,
                basis,
                &control,
                &excess,
                &vec![excess0; n],
                0,
                z.row_mut(0),
            );
            y.row_mut(0).fill(y0_value);
            cont.row_mut(0).fill(c0);
            diagnostics.push(StepDiagnostics::from_fits(0, times[0], &Fit::mean_only(n), &zfit, disc));
            diagnostics.reverse();
            let in_sample = PriceEstimate {
                value: y0_value,
                std_error: if exercise0 { 0.0 } else { disc * stop_se },
            };
            let low = low_bias(&paths, spec, params, &stops, exercise0)?;
            let k_matrix = super::kprocess::compensator(&paths, spec, &cont);
            return Ok(BsdeSolution {
                method: BsdeMethod::ReflectedSnell,
                spec: *spec,
                params: *params,
                basis: *basis,
                paths,
                y,
                z,
                k: k_matrix,
                continuation: Some(cont),
                y0: low,
                y0_in_sample: Some(in_sample),
                y0_low_bias: Some(low),
                diagnostics,
            });
        }

        let stop = fit(basis, spec, xs, |i| cash_excess[i], |i| keep(xs, i));
        let rest = fit(&all_paths, spec, xs, |i| cash_excess[i], |_| true);
        let rows: Vec<(f64, f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = xs[i];
                let g = spec.payoff(x);
                let itm = spec.in_the_money(x);
                let fitted = if itm { stop.eval(spec, x) } else { rest.eval(spec, x) }.max(0.0);
                let floor = disc * expected_payoff(params, spec, x, dt).0;
                let c = (disc * (control.mean(i) + fitted)).max(floor);
                let exercise = itm && g >= disc * (control.mean(i) + stop.eval(spec, x));
                (fitted, c, if exercise { g } else { disc * cash[i] })
            })
            .collect();
        let centre: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let zfit = z_row(&paths, spec, params, basis, &control, &excess, &centre, k, z.row_mut(k));
        for (i, (_, c, cf)) in rows.into_iter().enumerate() {
            cont.row_mut(k)[i] = c;
            y.row_mut(k)[i] = spec.payoff(xs[i]).max(c);
            cash[i] = cf;
        }
        diagnostics.push(StepDiagnostics::from_fits(k, times[k], &stop, &zfit, disc));
        stops[k] = Some(stop);
        next_euro = control.here;
    }
    unreachable!("the backward loop returns at k = 0")
}

/// Applies the fitted stopping rule to a fresh path set drawn from a
/// disjoint stream range, in batches so the second set is never held whole.
fn low_bias(
    paths: &PathBundle,
    spec: &OptionSpec,
    params: &MarketParams,
    stops: &[Option<Fit>],
    exercise0: bool,
) -> Result<PriceEstimate> {
    let schedule = paths.schedule();
    let s = schedule.start();
    let x0 = paths.value(0, 0);
    if exercise0 {
        return Ok(PriceEstimate {
            value: spec.payoff(x0),
            std_error: 0.0,
        });
    }
    let point = EvalPoint::new(s, x0)?;
    let n = paths.n_paths();
    let steps = schedule.steps();
    let times = schedule.times();
    let r = params.rate;
    let seed = paths.seed();
    let batch = LOW_BIAS_BLOCKS_PER_BATCH * PATH_BLOCK_SIZE;
    let mut values = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let m = batch.min(n - start);
        let offset = seed.stream_offset + LOW_BIAS_STREAM_OFFSET + (start / PATH_BLOCK_SIZE) as u64;
        let fresh = simulate_paths_on_stream(params, &point, schedule, m, seed.seed, offset)?;
        let batch_values: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|i| {
                for k in 1..steps {
                    let x = fresh.value(i, k);
                    if !spec.in_the_money(x) {
                        continue;
                    }
                    let stop = stops[k].as_ref().expect("fit stored for every interior step");
                    let g = spec.payoff(x);
                    // Same rule as the backward pass: E[h_{k+1} | x] = e^{r dt} h_k(x).
                    if g >= european(params, spec, times[k], x).0 + (-r * schedule.dt(k)).exp() * stop.eval(spec, x) {
                        return (-r * (times[k] - s)).exp() * g;
                    }
                }
                (-r * (times[steps] - s)).exp() * spec.payoff(fresh.value(i, steps))
            })
            .collect();
        values.extend(batch_values);
        start += m;
    }
    let (value, std_error) = mean_and_se(values.len(), |i| values[i]);
    Ok(PriceEstimate { value, std_error })
}
