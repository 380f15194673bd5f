//! Reference pricers independent of the PDE and BSDE machinery: a
//! Cox–Ross–Rubinstein tree and transition-density quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{density_unchecked, EvalPoint, MarketParams, OptionKind, OptionSpec};
use crate::quadrature::integrate;

/// Step count of the acceptance oracle; the pair `(N, 2N)` is extrapolated.
pub const ORACLE_STEPS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub steps: usize,
}

impl TreeConfig {
    pub const PARAMETERIZATION: &'static str = "CRR";

    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("steps", "tree needs at least one step"));
        }
        Ok(Self { steps })
    }
}

struct Crr {
    up: f64,
    prob_up: f64,
    disc: f64,
    lowest: f64,
}

impl Crr {
    fn new(params: &MarketParams, point: &EvalPoint, steps: usize) -> Result<Self> {
        point.validate_against(params)?;
        let dt = point.time_to_expiry(params) / steps as f64;
        let spread = params.sigma * dt.sqrt();
        let up = spread.exp();
        let down = 1.0 / up;
        let growth = ((params.rate - params.dividend) * dt).exp();
        let prob_up = (growth - down) / (up - down);
        if !(prob_up > 0.0 && prob_up < 1.0) {
            return Err(invalid(
                "steps",
                format!("CRR up-probability {prob_up} outside (0, 1); use more steps"),
            ));
        }
        let span = spread * steps as f64;
        let highest = point.spot * span.exp();
        let lowest = point.spot * (-span).exp();
        if !highest.is_finite() || !(params.rate * dt).exp().is_finite() {
            return Err(Error::Overflow(format!(
                "top node x*exp(sigma*sqrt(dt)*N) = {highest} is not finite"
            )));
        }
        Ok(Self {
            up,
            prob_up,
            disc: (-params.rate * dt).exp(),
            lowest,
        })
    }

    fn price(&self, spec: &OptionSpec, point: &EvalPoint, steps: usize, american: bool) -> Result<f64> {
        let up2 = self.up * self.up;
        let mut node = self.lowest;
        let mut values: Vec<f64> = (0..=steps)
            .map(|_| {
                let v = spec.payoff(node);
                node *= up2;
                v
            })
            .collect();
        let (pu, pd) = (self.prob_up * self.disc, (1.0 - self.prob_up) * self.disc);
        let log_up = self.up.ln();
        for i in (0..steps).rev() {
            let mut s = point.spot * (-(i as f64) * log_up).exp();
            for j in 0..=i {
                let cont = pd * values[j] + pu * values[j + 1];
                values[j] = if american { cont.max(spec.payoff(s)) } else { cont };
                s *= up2;
            }
        }
        let v = values[0];
        if !v.is_finite() {
            return Err(Error::Overflow(format!("tree value {v} is not finite")));
        }
        Ok(v)
    }
}

/// American value by backward induction with `max(continuation, payoff)` at every node.
pub fn tree_price_american(
    params: &MarketParams,
    spec: &OptionSpec,
    point: &EvalPoint,
    cfg: &TreeConfig,
) -> Result<f64> {
    Crr::new(params, point, cfg.steps)?.price(spec, point, cfg.steps, true)
}

/// European value on the same lattice.
pub fn tree_price_european(
    params: &MarketParams,
    spec: &OptionSpec,
    point: &EvalPoint,
    cfg: &TreeConfig,
) -> Result<f64> {
    Crr::new(params, point, cfg.steps)?.price(spec, point, cfg.steps, false)
}

/// Richardson-extrapolated American tree value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub coarse: f64,
    pub fine: f64,
    pub steps: usize,
}

impl OracleValue {
    /// `|P(2N) - P(N)| / P(2N)`.
    pub fn pair_disagreement(&self) -> f64 {
        (self.fine - self.coarse).abs() / self.fine.abs().max(f64::MIN_POSITIVE)
    }
}

/// `2 P(2N) - P(N)` from CRR trees with `N` and `2N` steps.
pub fn american_oracle(
    params: &MarketParams,
    spec: &OptionSpec,
    point: &EvalPoint,
    steps: usize,
) -> Result<OracleValue> {
    let coarse = tree_price_american(params, spec, point, &TreeConfig::new(steps)?)?;
    let fine = tree_price_american(params, spec, point, &TreeConfig::new(2 * steps)?)?;
    Ok(OracleValue {
        value: 2.0 * fine - coarse,
        coarse,
        fine,
        steps,
    })
}

/// Log-price integration window holding all but ~1e-300 of the mass.
fn log_window(params: &MarketParams, tau: f64, x: f64) -> (f64, f64, f64) {
    let sd = params.sigma * tau.sqrt();
    let centre = x.ln() + params.log_drift() * tau;
    (centre - 40.0 * sd, centre + 40.0 * sd, sd)
}

/// `∫ f(y) p(y) dy` over `y` in `(lo, hi)` (prices), integrating in log-price.
fn expect_over(
    params: &MarketParams,
    tau: f64,
    x: f64,
    lo: f64,
    hi: f64,
    f: impl Fn(f64) -> f64,
    abs_tol: f64,
) -> Result<f64> {
    let (zmin, zmax, _) = log_window(params, tau, x);
    let a = if lo > 0.0 { lo.ln().max(zmin) } else { zmin };
    let b = if hi.is_finite() { hi.ln().min(zmax) } else { zmax };
    if a >= b {
        return Ok(0.0);
    }
    let q = integrate(
        |z| {
            let y = z.exp();
            f(y) * density_unchecked(params, tau, x, y) * y
        },
        a,
        b,
        abs_tol,
        1e-13,
    )?;
    Ok(q.value)
}

/// Discounted expected payoff at expiry by adaptive quadrature of the
/// transition density.
pub fn european_quadrature(params: &MarketParams, spec: &OptionSpec, point: &EvalPoint) -> Result<f64> {
    point.validate_against(params)?;
    if !(point.spot > 0.0) {
        return Err(invalid("spot", "quadrature needs x > 0"));
    }
    let tau = point.time_to_expiry(params);
    let k = spec.strike;
    let undiscounted = match spec.kind {
        OptionKind::Call => expect_over(params, tau, point.spot, k, f64::INFINITY, |y| y - k, 1e-10)?,
        OptionKind::Put => expect_over(params, tau, point.spot, 0.0, k, |y| k - y, 1e-10)?,
    };
    Ok((-params.rate * tau).exp() * undiscounted)
}

/// Spot delta of the European value, `e^{-r tau} E[g'(X_T) X_T / x]`, by quadrature.
pub fn european_delta_quadrature(params: &MarketParams, spec: &OptionSpec, point: &EvalPoint) -> Result<f64> {
    point.validate_against(params)?;
    if !(point.spot > 0.0) {
        return Err(invalid("spot", "quadrature needs x > 0"));
    }
    let tau = point.time_to_expiry(params);
    let x = point.spot;
    let k = spec.strike;
    let disc = (-params.rate * tau).exp();
    let delta = match spec.kind {
        OptionKind::Call => expect_over(params, tau, x, k, f64::INFINITY, |y| y / x, 1e-12)?,
        OptionKind::Put => -expect_over(params, tau, x, 0.0, k, |y| y / x, 1e-12)?,
    };
    Ok(disc * delta)
}
