//! Market and contract data, the payoff, the explicit exercise driver, and
//! exact simulation of the dividend-paying geometric Brownian motion.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Risk-neutral market: rate `r`, dividend yield `d`, volatility and expiry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMarketParams")]
pub struct MarketParams {
    pub rate: f64,
    pub dividend: f64,
    pub sigma: f64,
    pub expiry: f64,
}

#[derive(Deserialize)]
struct RawMarketParams {
    rate: f64,
    dividend: f64,
    sigma: f64,
    expiry: f64,
}

impl TryFrom<RawMarketParams> for MarketParams {
    type Error = Error;

    fn try_from(raw: RawMarketParams) -> Result<Self> {
        MarketParams::new(raw.rate, raw.dividend, raw.sigma, raw.expiry)
    }
}

impl MarketParams {
    pub fn new(rate: f64, dividend: f64, sigma: f64, expiry: f64) -> Result<Self> {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(invalid("rate", format!("must be finite and >= 0, got {rate}")));
        }
        if !(dividend.is_finite() && dividend >= 0.0) {
            return Err(invalid("dividend", format!("must be finite and >= 0, got {dividend}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid("sigma", format!("must be finite and > 0, got {sigma}")));
        }
        if !(expiry.is_finite() && expiry > 0.0) {
            return Err(invalid("expiry", format!("must be finite and > 0, got {expiry}")));
        }
        Ok(Self {
            rate,
            dividend,
            sigma,
            expiry,
        })
    }

    /// Drift of `ln X` per unit time.
    pub fn log_drift(&self) -> f64 {
        self.rate - self.dividend - 0.5 * self.sigma * self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

impl std::fmt::Display for OptionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptionKind::Call => f.write_str("call"),
            OptionKind::Put => f.write_str("put"),
        }
    }
}

impl std::str::FromStr for OptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "call" => Ok(OptionKind::Call),
            "put" => Ok(OptionKind::Put),
            other => Err(invalid("kind", format!("expected `call` or `put`, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOptionSpec")]
pub struct OptionSpec {
    pub kind: OptionKind,
    pub strike: f64,
}

#[derive(Deserialize)]
struct RawOptionSpec {
    kind: OptionKind,
    strike: f64,
}

impl TryFrom<RawOptionSpec> for OptionSpec {
    type Error = Error;

    fn try_from(raw: RawOptionSpec) -> Result<Self> {
        OptionSpec::new(raw.kind, raw.strike)
    }
}

impl OptionSpec {
    pub fn new(kind: OptionKind, strike: f64) -> Result<Self> {
        if !(strike.is_finite() && strike > 0.0) {
            return Err(invalid("strike", format!("must be finite and > 0, got {strike}")));
        }
        Ok(Self { kind, strike })
    }

    pub fn call(strike: f64) -> Result<Self> {
        Self::new(OptionKind::Call, strike)
    }

    pub fn put(strike: f64) -> Result<Self> {
        Self::new(OptionKind::Put, strike)
    }

    /// Payoff `g(x)` without argument checks; callers guarantee `x >= 0`.
    #[inline]
    pub fn payoff(&self, x: f64) -> f64 {
        match self.kind {
            OptionKind::Call => (x - self.strike).max(0.0),
            OptionKind::Put => (self.strike - x).max(0.0),
        }
    }

    /// Slope of the payoff, taking the right derivative at the strike.
    #[inline]
    pub fn payoff_slope(&self, x: f64) -> f64 {
        match self.kind {
            OptionKind::Call if x >= self.strike => 1.0,
            OptionKind::Put if x < self.strike => -1.0,
            _ => 0.0,
        }
    }

    /// Holding-gain rate on the exercise region: `(d x - r K)^+` for a call,
    /// `(r K - d x)^+` for a put. The driver is this rate gated by `y <= g(x)`.
    #[inline]
    pub fn exercise_rate(&self, params: &MarketParams, x: f64) -> f64 {
        match self.kind {
            OptionKind::Call => (params.dividend * x - params.rate * self.strike).max(0.0),
            OptionKind::Put => (params.rate * self.strike - params.dividend * x).max(0.0),
        }
    }

    /// Tolerance of the inclusive indicator `1{y <= g(x)}`.
    #[inline]
    pub fn indicator_tolerance(&self) -> f64 {
        1e-12 * self.strike.max(1.0)
    }

    /// True when the driver vanishes identically: call without dividends or
    /// put at zero rate. No early exercise premium exists in these cases.
    pub fn driver_vanishes(&self, params: &MarketParams) -> bool {
        match self.kind {
            OptionKind::Call => params.dividend == 0.0,
            OptionKind::Put => params.rate == 0.0,
        }
    }

    /// Strictly in the money.
    #[inline]
    pub fn in_the_money(&self, x: f64) -> bool {
        self.payoff(x) > 0.0
    }
}

/// Evaluation point `(s, x)`: start time and spot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvalPoint")]
pub struct EvalPoint {
    pub start: f64,
    pub spot: f64,
}

#[derive(Deserialize)]
struct RawEvalPoint {
    #[serde(default)]
    start: f64,
    spot: f64,
}

impl TryFrom<RawEvalPoint> for EvalPoint {
    type Error = Error;

    fn try_from(raw: RawEvalPoint) -> Result<Self> {
        EvalPoint::new(raw.start, raw.spot)
    }
}

impl EvalPoint {
    pub fn new(start: f64, spot: f64) -> Result<Self> {
        if !(start.is_finite() && start >= 0.0) {
            return Err(invalid("start", format!("must be finite and >= 0, got {start}")));
        }
        if !(spot.is_finite() && spot >= 0.0) {
            return Err(invalid("spot", format!("must be finite and >= 0, got {spot}")));
        }
        Ok(Self { start, spot })
    }

    pub fn at_spot(spot: f64) -> Result<Self> {
        Self::new(0.0, spot)
    }

    /// Checks `0 <= s < T`.
    pub fn validate_against(&self, params: &MarketParams) -> Result<()> {
        if self.start >= params.expiry {
            return Err(invalid(
                "start",
                format!("must be < expiry {}, got {}", params.expiry, self.start),
            ));
        }
        Ok(())
    }

    pub fn time_to_expiry(&self, params: &MarketParams) -> f64 {
        params.expiry - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepPolicy {
    Uniform,
    Custom,
}

/// Strictly increasing times from `s` to `T` inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSchedule {
    times: Vec<f64>,
    policy: StepPolicy,
}

impl TimeSchedule {
    pub fn uniform(start: f64, end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("steps", "schedule needs at least one step"));
        }
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(invalid("schedule", format!("need start < end, got [{start}, {end}]")));
        }
        let dt = (end - start) / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|k| start + k as f64 * dt).collect();
        times[steps] = end;
        Ok(Self {
            times,
            policy: StepPolicy::Uniform,
        })
    }

    pub fn custom(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(invalid("schedule", "needs at least two times"));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(invalid("schedule", "times must be finite"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("schedule", "times must be strictly increasing"));
        }
        Ok(Self {
            times,
            policy: StepPolicy::Custom,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn policy(&self) -> StepPolicy {
        self.policy
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("schedule is never empty")
    }

    /// Number of steps (one less than the number of times).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    pub fn max_dt(&self) -> f64 {
        (0..self.steps()).map(|k| self.dt(k)).fold(0.0, f64::max)
    }
}

/// Provenance of the random numbers behind a [`PathBundle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    /// ChaCha8 stream of the first block; block `b` draws from `stream_offset + b`.
    pub stream_offset: u64,
    pub block_size: usize,
}

pub const PATH_BLOCK_SIZE: usize = 1024;

/// Simulated stock paths, stored time-major: slice `k` holds every path at `t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    schedule: TimeSchedule,
    params: MarketParams,
    n_paths: usize,
    values: Vec<f64>,
    seed: SeedRecord,
}

impl PathBundle {
    pub const SCHEME: &'static str = "exact-lognormal";

    pub fn schedule(&self) -> &TimeSchedule {
        &self.schedule
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn seed(&self) -> SeedRecord {
        self.seed
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_times(&self) -> usize {
        self.schedule.times().len()
    }

    /// All paths at time index `k`.
    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_paths..(k + 1) * self.n_paths]
    }

    #[inline]
    pub fn value(&self, path: usize, k: usize) -> f64 {
        self.values[k * self.n_paths + path]
    }

    /// Brownian increment `W_{t_{k+1}} - W_{t_k}` recovered from the log return.
    /// Zero on the absorbed path `x = 0`.
    #[inline]
    pub fn brownian_increment(&self, path: usize, k: usize) -> f64 {
        let a = self.value(path, k);
        let b = self.value(path, k + 1);
        if a <= 0.0 || b <= 0.0 {
            return 0.0;
        }
        ((b / a).ln() - self.params.log_drift() * self.schedule.dt(k)) / self.params.sigma
    }
}

/// Payoff `g(x)`, rejecting negative prices.
pub fn payoff(spec: &OptionSpec, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(invalid("x", format!("price must be >= 0, got {x}")));
    }
    Ok(spec.payoff(x))
}

/// Discontinuous driver `q(x, y)`: the exercise rate while `y <= g(x)`.
pub fn driver_q(spec: &OptionSpec, params: &MarketParams, x: f64, y: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(invalid("x", format!("price must be >= 0, got {x}")));
    }
    Ok(driver_q_unchecked(spec, params, x, y))
}

#[inline]
pub(crate) fn driver_q_unchecked(spec: &OptionSpec, params: &MarketParams, x: f64, y: f64) -> f64 {
    if y <= spec.payoff(x) + spec.indicator_tolerance() {
        spec.exercise_rate(params, x)
    } else {
        0.0
    }
}

/// Full driver `-r y + q(x, y)`.
pub fn full_driver(spec: &OptionSpec, params: &MarketParams, x: f64, y: f64) -> Result<f64> {
    Ok(-params.rate * y + driver_q(spec, params, x, y)?)
}

/// Lognormal transition density of `X_t` given `X_s = x`.
pub fn transition_density(params: &MarketParams, s: f64, x: f64, t: f64, y: f64) -> Result<f64> {
    if !(t > s) {
        return Err(invalid("t", format!("need t > s, got s={s}, t={t}")));
    }
    if !(x > 0.0) {
        return Err(invalid("x", format!("need x > 0, got {x}")));
    }
    Ok(density_unchecked(params, t - s, x, y))
}

#[inline]
pub(crate) fn density_unchecked(params: &MarketParams, tau: f64, x: f64, y: f64) -> f64 {
    if y / x <= 0.0 {
        return 0.0;
    }
    let var = params.sigma * params.sigma * tau;
    let z = (y / x).ln() - params.log_drift() * tau;
    (-z * z / (2.0 * var)).exp() / (y * (2.0 * PI * var).sqrt())
}

/// Exact lognormal simulation of `n_paths` paths from `(s, x)` on `schedule`.
pub fn simulate_paths(
    params: &MarketParams,
    point: &EvalPoint,
    schedule: &TimeSchedule,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    simulate_paths_on_stream(params, point, schedule, n_paths, seed, 0)
}

/// As [`simulate_paths`], drawing from ChaCha8 streams starting at `stream_offset`.
/// Disjoint offsets give independent bundles under one seed.
pub fn simulate_paths_on_stream(
    params: &MarketParams,
    point: &EvalPoint,
    schedule: &TimeSchedule,
    n_paths: usize,
    seed: u64,
    stream_offset: u64,
) -> Result<PathBundle> {
    if n_paths == 0 {
        return Err(invalid("n_paths", "must be >= 1"));
    }
    point.validate_against(params)?;
    if (schedule.start() - point.start).abs() > 1e-12 || (schedule.end() - params.expiry).abs() > 1e-12 {
        return Err(invalid(
            "schedule",
            format!(
                "must run from s={} to T={}, got [{}, {}]",
                point.start,
                params.expiry,
                schedule.start(),
                schedule.end()
            ),
        ));
    }
    let n_times = schedule.times().len();
    let mut values = vec![0.0; n_times * n_paths];
    let n_blocks = n_paths.div_ceil(PATH_BLOCK_SIZE);
    // Bound the transient block buffers to a wave of blocks at a time.
    const WAVE: usize = 64;
    let mut first_block = 0;
    while first_block < n_blocks {
        let last_block = (first_block + WAVE).min(n_blocks);
        let blocks: Vec<Vec<f64>> = (first_block..last_block)
            .into_par_iter()
            .map(|b| {
                let lo = b * PATH_BLOCK_SIZE;
                let hi = (lo + PATH_BLOCK_SIZE).min(n_paths);
                simulate_block(params, point.spot, schedule, hi - lo, seed, stream_offset + b as u64)
            })
            .collect();
        for (offset, block) in blocks.into_iter().enumerate() {
            let lo = (first_block + offset) * PATH_BLOCK_SIZE;
            let width = block.len() / n_times;
            for k in 0..n_times {
                values[k * n_paths + lo..k * n_paths + lo + width].copy_from_slice(&block[k * width..(k + 1) * width]);
            }
        }
        first_block = last_block;
    }
    Ok(PathBundle {
        schedule: schedule.clone(),
        params: *params,
        n_paths,
        values,
        seed: SeedRecord {
            seed,
            stream_offset,
            block_size: PATH_BLOCK_SIZE,
        },
    })
}

/// One block of paths, time-major within the block.
fn simulate_block(
    params: &MarketParams,
    spot: f64,
    schedule: &TimeSchedule,
    width: usize,
    seed: u64,
    stream: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let n_times = schedule.times().len();
    let mut out = vec![0.0; n_times * width];
    out[..width].fill(spot);
    let drift = params.log_drift();
    let steps: Vec<(f64, f64)> = (0..schedule.steps())
        .map(|k| {
            let dt = schedule.dt(k);
            (drift * dt, params.sigma * dt.sqrt())
        })
        .collect();
    for i in 0..width {
        let mut x = spot;
        for (k, &(mu, vol)) in steps.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            x *= (mu + vol * z).exp();
            out[(k + 1) * width + i] = x;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use proptest::prelude::*;

    fn put_market() -> (MarketParams, OptionSpec) {
        (
            MarketParams::new(0.05, 0.0, 0.2, 1.0).unwrap(),
            OptionSpec::put(100.0).unwrap(),
        )
    }

    #[test]
    fn payoff_examples() {
        let call = OptionSpec::call(100.0).unwrap();
        let put = OptionSpec::put(100.0).unwrap();
        assert_eq!(payoff(&call, 120.0).unwrap(), 20.0);
        assert_eq!(payoff(&put, 120.0).unwrap(), 0.0);
        assert_eq!(payoff(&put, 80.0).unwrap(), 20.0);
        assert!(payoff(&put, -1.0).is_err());
    }

    #[test]
    fn driver_examples() {
        let (params, put) = put_market();
        assert_eq!(driver_q(&put, &params, 80.0, 20.0).unwrap(), 5.0);
        assert_eq!(driver_q(&put, &params, 80.0, 25.0).unwrap(), 0.0);
        assert!((full_driver(&put, &params, 80.0, 20.0).unwrap() - 4.0).abs() < 1e-12);

        let call = OptionSpec::call(100.0).unwrap();
        for &(x, y) in &[(50.0, 0.0), (150.0, 10.0), (150.0, 60.0)] {
            assert_eq!(driver_q(&call, &params, x, y).unwrap(), 0.0);
        }
        assert!((full_driver(&call, &params, 150.0, 10.0).unwrap() + 0.5).abs() < 1e-12);
        // y = 0 where the exercise rate is zero: both terms vanish.
        let dividend = MarketParams::new(0.05, 0.1, 0.2, 1.0).unwrap();
        assert_eq!(full_driver(&put, &dividend, 120.0, 0.0).unwrap(), 0.0);
        assert_eq!(full_driver(&call, &params, 80.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn invalid_market_rejected() {
        assert!(MarketParams::new(0.05, 0.0, 0.0, 1.0).is_err());
        assert!(MarketParams::new(-0.01, 0.0, 0.2, 1.0).is_err());
        assert!(MarketParams::new(0.05, -0.1, 0.2, 1.0).is_err());
        assert!(MarketParams::new(0.05, 0.0, 0.2, 0.0).is_err());
        assert!(OptionSpec::put(0.0).is_err());
        let params = MarketParams::new(0.05, 0.0, 0.2, 1.0).unwrap();
        assert!(EvalPoint::new(1.0, 100.0).unwrap().validate_against(&params).is_err());
    }

    #[test]
    fn serde_validates() {
        let bad = r#"{"rate":0.05,"dividend":0.0,"sigma":-0.2,"expiry":1.0}"#;
        assert!(serde_json::from_str::<MarketParams>(bad).is_err());
        let good: OptionSpec = serde_json::from_str(r#"{"kind":"put","strike":100}"#).unwrap();
        assert_eq!(good, OptionSpec::put(100.0).unwrap());
    }

    #[test]
    fn density_support_and_moments() {
        let params = MarketParams::new(0.05, 0.02, 0.3, 1.0).unwrap();
        assert_eq!(transition_density(&params, 0.0, 100.0, 0.5, -1.0).unwrap(), 0.0);
        assert!(transition_density(&params, 0.5, 100.0, 0.5, 90.0).is_err());
        assert!(transition_density(&params, 0.0, 0.0, 0.5, 90.0).is_err());

        // Integrate in log-price so the integrand is a smooth Gaussian.
        let (s, x, t) = (0.1, 100.0, 0.9);
        let f = |z: f64| {
            let y = z.exp();
            transition_density(&params, s, x, t, y).unwrap() * y
        };
        let sd = params.sigma * (t - s).sqrt();
        let centre = x.ln() + params.log_drift() * (t - s);
        let (a, b) = (centre - 40.0 * sd, centre + 40.0 * sd);
        let mass = integrate(f, a, b, 1e-12, 0.0).unwrap().value;
        assert!((mass - 1.0).abs() < 1e-8, "mass {mass}");
        let mean = integrate(|z: f64| f(z) * z.exp(), a, b, 1e-10, 1e-12).unwrap().value;
        let expected = x * ((params.rate - params.dividend) * (t - s)).exp();
        assert!((mean / expected - 1.0).abs() < 1e-6);
        let second = integrate(|z: f64| f(z) * (2.0 * z).exp(), a, b, 1e-8, 1e-12)
            .unwrap()
            .value;
        let expected2 = expected * expected * (params.sigma * params.sigma * (t - s)).exp();
        assert!((second / expected2 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_spot_stays_absorbed() {
        let (params, _) = put_market();
        let point = EvalPoint::new(0.0, 0.0).unwrap();
        let schedule = TimeSchedule::uniform(0.0, 1.0, 10).unwrap();
        let paths = simulate_paths(&params, &point, &schedule, 100, 7).unwrap();
        assert!((0..paths.n_times()).all(|k| paths.slice(k).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let (params, _) = put_market();
        let point = EvalPoint::at_spot(100.0).unwrap();
        let schedule = TimeSchedule::uniform(0.0, 1.0, 5).unwrap();
        let a = simulate_paths(&params, &point, &schedule, 3000, 42).unwrap();
        let b = simulate_paths(&params, &point, &schedule, 3000, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_paths(&params, &point, &schedule, 3000, 43).unwrap();
        assert_ne!(a.slice(5), c.slice(5));
        let d = simulate_paths_on_stream(&params, &point, &schedule, 3000, 42, 1 << 32).unwrap();
        assert_ne!(a.slice(5), d.slice(5));
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let (params, _) = put_market();
        let point = EvalPoint::at_spot(100.0).unwrap();
        let schedule = TimeSchedule::uniform(0.0, 1.0, 4).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_paths(&params, &point, &schedule, 5000, 9).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn terminal_mean_and_log_increments_match_gbm() {
        let params = MarketParams::new(0.05, 0.01, 0.25, 1.0).unwrap();
        let point = EvalPoint::new(0.2, 100.0).unwrap();
        let schedule = TimeSchedule::uniform(0.2, 1.0, 2).unwrap();
        let n = 1_000_000;
        let paths = simulate_paths(&params, &point, &schedule, n, 2024).unwrap();
        assert!(paths.slice(2).iter().all(|&v| v > 0.0));

        let terminal = paths.slice(2);
        let mean = terminal.iter().sum::<f64>() / n as f64;
        let var = terminal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let expected = 100.0 * ((params.rate - params.dividend) * 0.8).exp();
        assert!(
            (mean - expected).abs() < 3.0 * se,
            "mean {mean} vs {expected} (se {se})"
        );

        let dt = schedule.dt(0);
        let incs: Vec<f64> = (0..n).map(|i| (paths.value(i, 1) / paths.value(i, 0)).ln()).collect();
        let m = incs.iter().sum::<f64>() / n as f64;
        let v = incs.iter().map(|z| (z - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target_v = params.sigma * params.sigma * dt;
        assert!((m - params.log_drift() * dt).abs() < 4.0 * (target_v / n as f64).sqrt());
        // Var of the sample variance of a Gaussian is 2 v^2 / (n - 1).
        assert!((v - target_v).abs() < 4.0 * target_v * (2.0 / (n - 1) as f64).sqrt());
    }

    #[test]
    fn brownian_increments_recover_normals() {
        let (params, _) = put_market();
        let point = EvalPoint::at_spot(100.0).unwrap();
        let schedule = TimeSchedule::uniform(0.0, 1.0, 4).unwrap();
        let paths = simulate_paths(&params, &point, &schedule, 20_000, 1).unwrap();
        let n = paths.n_paths() as f64;
        let dw: Vec<f64> = (0..paths.n_paths()).map(|i| paths.brownian_increment(i, 2)).collect();
        let var = dw.iter().map(|w| w * w).sum::<f64>() / n;
        assert!((var / 0.25 - 1.0).abs() < 0.05);
    }

    #[test]
    fn schedule_validation() {
        assert!(TimeSchedule::uniform(0.0, 1.0, 0).is_err());
        assert!(TimeSchedule::custom(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        let s = TimeSchedule::custom(vec![0.0, 0.1, 1.0]).unwrap();
        assert_eq!(s.steps(), 2);
        assert_eq!(s.end(), 1.0);
        let (params, _) = put_market();
        let point = EvalPoint::at_spot(100.0).unwrap();
        let wrong = TimeSchedule::uniform(0.0, 0.5, 5).unwrap();
        assert!(simulate_paths(&params, &point, &wrong, 10, 1).is_err());
        assert!(simulate_paths(&params, &point, &s, 0, 1).is_err());
    }

    proptest! {
        #[test]
        fn payoff_is_nonnegative_convex_lipschitz(
            k in 1.0f64..200.0, a in 0.0f64..400.0, b in 0.0f64..400.0, put in any::<bool>()
        ) {
            let spec = if put { OptionSpec::put(k).unwrap() } else { OptionSpec::call(k).unwrap() };
            let (ga, gb) = (spec.payoff(a), spec.payoff(b));
            prop_assert!(ga >= 0.0 && gb >= 0.0);
            prop_assert!((ga - gb).abs() <= (a - b).abs() + 1e-12);
            prop_assert!(spec.payoff(0.5 * (a + b)) <= 0.5 * (ga + gb) + 1e-12);
        }

        #[test]
        fn driver_gated_nonnegative_and_monotone(
            r in 0.0f64..0.2, d in 0.0f64..0.2, x in 0.0f64..300.0,
            y1 in -50.0f64..200.0, y2 in -50.0f64..200.0, put in any::<bool>()
        ) {
            let params = MarketParams::new(r, d, 0.2, 1.0).unwrap();
            let spec = if put { OptionSpec::put(100.0).unwrap() } else { OptionSpec::call(100.0).unwrap() };
            let q1 = driver_q(&spec, &params, x, y1).unwrap();
            prop_assert!(q1 >= 0.0);
            if y1 > spec.payoff(x) + spec.indicator_tolerance() {
                prop_assert_eq!(q1, 0.0);
            }
            let (lo, hi) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
            prop_assert!(full_driver(&spec, &params, x, hi).unwrap() <= full_driver(&spec, &params, x, lo).unwrap());
        }

        #[test]
        fn driver_vanishes_for_degenerate_contracts(r in 0.0f64..0.2, d in 0.0f64..0.2, x in 0.0f64..300.0, y in -50.0f64..200.0) {
            let call = OptionSpec::call(100.0).unwrap();
            let no_div = MarketParams::new(r, 0.0, 0.2, 1.0).unwrap();
            prop_assert_eq!(driver_q(&call, &no_div, x, y).unwrap(), 0.0);
            let put = OptionSpec::put(100.0).unwrap();
            let no_rate = MarketParams::new(0.0, d, 0.2, 1.0).unwrap();
            prop_assert_eq!(driver_q(&put, &no_rate, x, y).unwrap(), 0.0);
        }

        #[test]
        fn density_is_nonnegative(x in 1.0f64..300.0, y in -10.0f64..600.0, tau in 0.01f64..2.0) {
            let params = MarketParams::new(0.05, 0.02, 0.3, 3.0).unwrap();
            prop_assert!(transition_density(&params, 0.0, x, tau, y).unwrap() >= 0.0);
        }
    }
}
