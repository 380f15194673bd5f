//! European values in closed form, used as control variates in the
//! backward regressions.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::model::{MarketParams, OptionKind, OptionSpec};

/// `E[g(X_{t+dt}) | X_t = x]` (undiscounted) and its derivative in `x`.
pub(crate) fn expected_payoff(params: &MarketParams, spec: &OptionSpec, x: f64, dt: f64) -> (f64, f64) {
    let k = spec.strike;
    if dt <= 0.0 {
        return (spec.payoff(x), spec.payoff_slope(x));
    }
    let growth = (params.log_drift() * dt + 0.5 * params.sigma * params.sigma * dt).exp();
    if x <= 0.0 {
        return (spec.payoff(0.0), spec.payoff_slope(0.0) * growth);
    }
    let fwd = x * growth;
    let sd = params.sigma * dt.sqrt();
    let d1 = ((fwd / k).ln() + 0.5 * sd * sd) / sd;
    let d2 = d1 - sd;
    let n = Normal::standard();
    match spec.kind {
        OptionKind::Call => (fwd * n.cdf(d1) - k * n.cdf(d2), growth * n.cdf(d1)),
        OptionKind::Put => (k * n.cdf(-d2) - fwd * n.cdf(-d1), -growth * n.cdf(-d1)),
    }
}

/// Discounted European value `h(t, x) = e^{-r(T-t)} E[g(X_T) | X_t = x]`
/// and its `x`-derivative. Discounted to a fixed origin it is a martingale,
/// so `E[h(t + dt, X_{t+dt}) | X_t = x] = e^{r dt} h(t, x)` exactly.
pub(crate) fn european(params: &MarketParams, spec: &OptionSpec, t: f64, x: f64) -> (f64, f64) {
    let tau = (params.expiry - t).max(0.0);
    let disc = (-params.rate * tau).exp();
    let (m, slope) = expected_payoff(params, spec, x, tau);
    (disc * m, disc * slope)
}
