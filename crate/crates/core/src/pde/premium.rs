use std::cell::RefCell;

use super::boundary::BoundaryReport;
use crate::error::{Error, Result};
use crate::model::{EvalPoint, MarketParams, OptionKind, OptionSpec};
use crate::quadrature::integrate;

const OUTER_TOLERANCE: f64 = 1e-10;
const INNER_TOLERANCE: f64 = 1e-12;
const WINDOW_SD: f64 = 40.0;

/// Early-exercise premium: the discounted expected exercise rate collected
/// while the price sits in the exercise region bounded by `boundary`.
/// Outer integral in time per boundary segment, inner integral in log-price
/// against the transition density.
pub fn eep_premium(
    params: &MarketParams,
    spec: &OptionSpec,
    point: &EvalPoint,
    boundary: &BoundaryReport,
) -> Result<f64> {
    point.validate_against(params)?;
    if boundary.kind != spec.kind {
        return Err(Error::Incompatible(format!(
            "boundary is for a {} but the contract is a {}",
            boundary.kind, spec.kind
        )));
    }
    if spec.driver_vanishes(params) {
        return Ok(0.0);
    }
    let s = point.start;
    let x = point.spot;
    let sd_rate = params.sigma;
    let drift = params.log_drift();
    let k = spec.strike;
    let r = params.rate;
    let d = params.dividend;
    // Exercise rate is positive only below rK/d (put) or above rK/d (call).
    let rate_cut = if d > 0.0 { (r * k / d).ln() } else { f64::INFINITY };

    let inner = |t: f64| -> Result<f64> {
        let tau = t - s;
        if tau <= 0.0 {
            return Ok(0.0);
        }
        let Some(level) = boundary.level_at(t) else {
            return Ok(0.0);
        };
        let mean = x.ln() + drift * tau;
        let sd = sd_rate * tau.sqrt();
        let (lo, hi) = match spec.kind {
            OptionKind::Put => (
                mean - WINDOW_SD * sd,
                level.ln().min(rate_cut).min(mean + WINDOW_SD * sd),
            ),
            OptionKind::Call => (
                level.ln().max(rate_cut).max(mean - WINDOW_SD * sd),
                mean + WINDOW_SD * sd,
            ),
        };
        if hi <= lo {
            return Ok(0.0);
        }
        let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let f = |z: f64| {
            let y = z.exp();
            let e = (z - mean) / sd;
            spec.exercise_rate(params, y) * norm * (-0.5 * e * e).exp()
        };
        Ok((-r * tau).exp() * integrate(f, lo, hi, INNER_TOLERANCE, 0.0)?.value)
    };

    let mut total = 0.0;
    let times = &boundary.times;
    for w in times.windows(2) {
        let (a, b) = (w[0].max(s), w[1]);
        if b <= a {
            continue;
        }
        let failure = RefCell::new(None);
        let seg = integrate(
            |t| match inner(t) {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            },
            a,
            b,
            OUTER_TOLERANCE,
            0.0,
        )?;
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        total += seg.value;
    }
    Ok(total.max(0.0))
}
