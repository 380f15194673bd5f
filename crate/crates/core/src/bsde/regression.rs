use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::OptionSpec;

/// Paths per partial sum. Sums are formed per chunk and then added in chunk
/// order, so results do not depend on the number of worker threads.
pub(crate) const CHUNK: usize = 4096;

/// Deterministic parallel sum of `f(i)` over `0..n`.
pub(crate) fn chunked_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let parts: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| (c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f).sum())
        .collect();
    parts.iter().sum()
}

/// Mean and standard error of the mean.
pub(crate) fn mean_and_se<F>(n: usize, f: F) -> (f64, f64)
where
    F: Fn(usize) -> f64 + Sync,
{
    let mean = chunked_sum(n, &f) / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = chunked_sum(n, |i| (f(i) - mean).powi(2)) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Polynomials in moneyness `x/K` up to `degree`, optionally with the
/// scaled payoff `g(x)/K` as an extra column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub degree: usize,
    pub include_payoff: bool,
    /// Stopping regressions use in-the-money paths only.
    pub itm_only: bool,
}

impl RegressionBasis {
    pub const FAMILY: &'static str = "polynomial-in-moneyness";

    pub fn new(degree: usize, include_payoff: bool, itm_only: bool) -> Result<Self> {
        let basis = Self {
            degree,
            include_payoff,
            itm_only,
        };
        basis.validate()?;
        Ok(basis)
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree < 1 {
            return Err(invalid("degree", "basis degree must be >= 1"));
        }
        if self.degree > 8 {
            return Err(invalid(
                "degree",
                format!("degree {} is not supported (max 8)", self.degree),
            ));
        }
        Ok(())
    }

    pub fn columns(&self) -> usize {
        self.degree + 1 + self.include_payoff as usize
    }
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self {
            degree: 3,
            include_payoff: true,
            itm_only: true,
        }
    }
}

/// Columns actually used by a fit after any reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Columns {
    pub degree: usize,
    pub payoff: bool,
}

impl Columns {
    fn count(&self) -> usize {
        self.degree + 1 + self.payoff as usize
    }

    #[inline]
    pub(crate) fn fill(&self, spec: &OptionSpec, x: f64, out: &mut [f64]) {
        let m = x / spec.strike;
        let mut p = 1.0;
        for slot in out.iter_mut().take(self.degree + 1) {
            *slot = p;
            p *= m;
        }
        if self.payoff {
            out[self.degree + 1] = spec.payoff(x) / spec.strike;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub columns: Columns,
    pub coefficients: Vec<f64>,
    pub samples: usize,
    pub condition: f64,
    pub r_squared: f64,
    pub residual_se: f64,
}

impl Fit {
    fn empty() -> Self {
        Self {
            columns: Columns {
                degree: 0,
                payoff: false,
            },
            coefficients: vec![0.0],
            samples: 0,
            condition: 1.0,
            r_squared: 0.0,
            residual_se: 0.0,
        }
    }

    /// Placeholder for a step where every path shares one state and the
    /// conditional expectation is a plain mean.
    pub(crate) fn mean_only(samples: usize) -> Self {
        Self {
            samples,
            ..Self::empty()
        }
    }

    #[inline]
    pub fn eval(&self, spec: &OptionSpec, x: f64) -> f64 {
        let mut phi = [0.0; 10];
        self.columns.fill(spec, x, &mut phi);
        self.coefficients.iter().zip(&phi).map(|(b, f)| b * f).sum()
    }

    /// Typical standard error of a fitted value, `s * sqrt(p / n)`.
    pub fn fitted_se(&self) -> f64 {
        if self.samples == 0 {
            return 0.0;
        }
        self.residual_se * (self.coefficients.len() as f64 / self.samples as f64).sqrt()
    }
}

/// Sufficient statistics of a least-squares problem.
#[derive(Clone)]
struct Normal {
    p: usize,
    xtx: Vec<f64>,
    xty: Vec<f64>,
    yy: f64,
    y: f64,
    n: usize,
}

impl Normal {
    fn new(p: usize) -> Self {
        Self {
            p,
            xtx: vec![0.0; p * p],
            xty: vec![0.0; p],
            yy: 0.0,
            y: 0.0,
            n: 0,
        }
    }

    fn add(&mut self, other: &Normal) {
        for (a, b) in self.xtx.iter_mut().zip(&other.xtx) {
            *a += b;
        }
        for (a, b) in self.xty.iter_mut().zip(&other.xty) {
            *a += b;
        }
        self.yy += other.yy;
        self.y += other.y;
        self.n += other.n;
    }
}

const RANK_TOLERANCE: f64 = 1e-11;

/// Least-squares fit of `target(i)` on the basis evaluated at `xs[i]`,
/// restricted to samples where `keep(i)` holds. A collinear payoff column is
/// dropped silently (it is affine in moneyness on the in-the-money set);
/// any other rank deficiency lowers the degree with a warning.
pub(crate) fn fit<T, K>(basis: &RegressionBasis, spec: &OptionSpec, xs: &[f64], target: T, keep: K) -> Fit
where
    T: Fn(usize) -> f64 + Sync,
    K: Fn(usize) -> bool + Sync,
{
    let full = Columns {
        degree: basis.degree,
        payoff: basis.include_payoff,
    };
    let p = full.count();
    let n = xs.len();
    let parts: Vec<Normal> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Normal::new(p);
            let mut phi = [0.0; 10];
            #[allow(clippy::needless_range_loop)]
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                if !keep(i) {
                    continue;
                }
                let y = target(i);
                full.fill(spec, xs[i], &mut phi);
                for a in 0..p {
                    for b in a..p {
                        acc.xtx[a * p + b] += phi[a] * phi[b];
                    }
                    acc.xty[a] += phi[a] * y;
                }
                acc.yy += y * y;
                acc.y += y;
                acc.n += 1;
            }
            acc
        })
        .collect();
    let mut total = Normal::new(p);
    for part in &parts {
        total.add(part);
    }
    for a in 0..p {
        for b in 0..a {
            total.xtx[a * p + b] = total.xtx[b * p + a];
        }
    }
    if total.n == 0 {
        return Fit::empty();
    }

    let mut candidates = vec![full];
    if full.payoff {
        candidates.push(Columns {
            degree: full.degree,
            payoff: false,
        });
    }
    for degree in (0..full.degree).rev() {
        candidates.push(Columns { degree, payoff: false });
    }
    for (attempt, cols) in candidates.iter().enumerate() {
        let q = cols.count();
        if q > total.n {
            continue;
        }
        let index: Vec<usize> = (0..=cols.degree)
            .chain(cols.payoff.then_some(full.degree + 1))
            .collect();
        if let Some((coefficients, condition)) = solve_subset(&total, &index) {
            if cols.degree < full.degree {
                log::warn!(
                    "regression rank deficient with {} samples; basis reduced from degree {} to {} (attempt {})",
                    total.n,
                    full.degree,
                    cols.degree,
                    attempt
                );
            }
            let mut ssr = total.yy;
            for (a, &ia) in index.iter().enumerate() {
                ssr -= 2.0 * coefficients[a] * total.xty[ia];
                for (b, &ib) in index.iter().enumerate() {
                    ssr += coefficients[a] * coefficients[b] * total.xtx[ia * p + ib];
                }
            }
            let ssr = ssr.max(0.0);
            let nn = total.n as f64;
            let sst = total.yy - total.y * total.y / nn;
            let r_squared = if sst > 0.0 {
                (1.0 - ssr / sst).clamp(0.0, 1.0)
            } else {
                1.0
            };
            let dof = total.n.saturating_sub(q).max(1) as f64;
            return Fit {
                columns: *cols,
                coefficients,
                samples: total.n,
                condition,
                r_squared,
                residual_se: (ssr / dof).sqrt(),
            };
        }
    }
    // Constant column always has full rank once a sample exists.
    unreachable!("constant-only regression cannot be rank deficient")
}

/// Solves the normal equations on a column subset through an SVD of the
/// equilibrated Gram matrix. `None` if the subset is rank deficient.
fn solve_subset(total: &Normal, index: &[usize]) -> Option<(Vec<f64>, f64)> {
    let p = total.p;
    let q = index.len();
    let scale: Vec<f64> = index
        .iter()
        .map(|&i| {
            let d = total.xtx[i * p + i];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    if scale.contains(&0.0) {
        return None;
    }
    let a = DMatrix::from_fn(q, q, |r, c| total.xtx[index[r] * p + index[c]] * scale[r] * scale[c]);
    let rhs = DVector::from_fn(q, |r, _| total.xty[index[r]] * scale[r]);
    let svd = a.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_min > RANK_TOLERANCE * s_max) {
        return None;
    }
    let beta = svd.solve(&rhs, 0.0).ok()?;
    Some(((0..q).map(|r| beta[r] * scale[r]).collect(), s_max / s_min))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_a_cubic_exactly() {
        let spec = OptionSpec::call(100.0).unwrap();
        let basis = RegressionBasis::new(3, false, false).unwrap();
        let xs: Vec<f64> = (0..5000).map(|i| 50.0 + i as f64 * 0.02).collect();
        let f = |x: f64| {
            let m = x / 100.0;
            1.0 - 2.0 * m + 0.5 * m * m * m
        };
        let fit = fit(&basis, &spec, &xs, |i| f(xs[i]), |_| true);
        assert_eq!(fit.columns.degree, 3);
        assert!((fit.eval(&spec, 123.0) - f(123.0)).abs() < 1e-9);
        assert!(fit.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn collinear_payoff_column_is_dropped() {
        let spec = OptionSpec::put(100.0).unwrap();
        let xs: Vec<f64> = (0..1000).map(|i| 60.0 + i as f64 * 0.03).collect();
        let fit = fit(
            &RegressionBasis::default(),
            &spec,
            &xs,
            |i| xs[i].sqrt(),
            |i| xs[i] < 100.0,
        );
        assert!(!fit.columns.payoff);
        assert_eq!(fit.columns.degree, 3);
    }

    #[test]
    fn degree_drops_when_samples_are_degenerate() {
        let spec = OptionSpec::put(100.0).unwrap();
        let xs = vec![90.0, 90.0, 95.0, 95.0, 90.0];
        let fit = fit(&RegressionBasis::default(), &spec, &xs, |i| xs[i], |_| true);
        assert_eq!(fit.columns.degree, 1);
        assert!((fit.eval(&spec, 92.0) - 92.0).abs() < 1e-9);
        let none = super::fit(&RegressionBasis::default(), &spec, &xs, |_| 1.0, |_| false);
        assert_eq!(none.samples, 0);
        assert_eq!(none.eval(&spec, 90.0), 0.0);
    }

    #[test]
    fn sums_are_thread_independent() {
        let n = 100_003;
        let f = |i: usize| ((i as f64) * 0.37).sin() * 1e3 + 1e-7 * i as f64;
        let a = chunked_sum(n, f);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| chunked_sum(n, f));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn basis_validation() {
        assert!(RegressionBasis::new(0, true, true).is_err());
        assert_eq!(RegressionBasis::default().columns(), 5);
    }
}
