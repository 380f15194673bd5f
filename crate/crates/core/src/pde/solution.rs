use std::fmt;

use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use super::operator::Stencil;
use crate::error::{invalid, Result};
use crate::model::{MarketParams, OptionKind, OptionSpec};

/// Contact tolerance as a fraction of the strike.
pub const CONTACT_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum PdeMethod {
    Obstacle,
    Penalized { penalty: f64 },
    Semilinear,
}

impl fmt::Display for PdeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PdeMethod::Obstacle => f.write_str("obstacle"),
            PdeMethod::Penalized { penalty } => write!(f, "penalized({penalty:e})"),
            PdeMethod::Semilinear => f.write_str("semilinear"),
        }
    }
}

/// Per-solve iteration counts and residuals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    /// Largest end-of-step residual of the slice solver.
    pub max_residual: f64,
    pub total_iterations: usize,
    pub max_iterations: usize,
    /// Steps where the semilinear iteration had to fall back to damping.
    pub damped_steps: usize,
    /// Largest number of nodes in the penalty or exercise active set.
    pub max_active_nodes: usize,
    /// `max (g - u)^+` over the surface.
    pub max_undershoot: f64,
}

/// Value surface on the full node set, boundary nodes included, stored
/// time-major with `n_time + 1` rows of `n_space + 2` values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdeSolution {
    pub grid: GridSpec,
    pub params: MarketParams,
    pub spec: OptionSpec,
    pub method: PdeMethod,
    pub times: Vec<f64>,
    pub nodes: Vec<f64>,
    pub u: Vec<f64>,
    pub contact_mask: Vec<bool>,
    /// Exercise boundary per time row; `None` for an empty contact set or a
    /// slice whose contact set is not a single interval.
    pub boundary: Vec<Option<f64>>,
    pub diagnostics: SolveDiagnostics,
}

impl PdeSolution {
    pub(crate) fn assemble(
        grid: GridSpec,
        params: MarketParams,
        spec: OptionSpec,
        method: PdeMethod,
        u: Vec<f64>,
        mut diagnostics: SolveDiagnostics,
    ) -> Self {
        let times = grid.times(params.expiry);
        let nodes = grid.nodes_for(spec.strike);
        let width = nodes.len();
        let eps = CONTACT_TOLERANCE * spec.strike;
        let mut contact_mask = Vec::with_capacity(u.len());
        let mut undershoot = 0.0f64;
        let last = u.len() / width - 1;
        for (k, row) in u.chunks(width).enumerate() {
            for (x, v) in nodes.iter().zip(row) {
                let g = spec.payoff(*x);
                undershoot = undershoot.max(g - v);
                // At expiry u = g everywhere; only keep nodes where stopping pays just before it.
                let stop = k < last || spec.exercise_rate(&params, *x) > 0.0;
                contact_mask.push(stop && spec.in_the_money(*x) && (v - g).abs() <= eps);
            }
        }
        diagnostics.max_undershoot = undershoot.max(0.0);
        let mut sol = Self {
            grid,
            params,
            spec,
            method,
            times,
            nodes,
            u,
            contact_mask,
            boundary: Vec::new(),
            diagnostics,
        };
        sol.boundary = (0..sol.times.len())
            .map(|k| super::boundary::slice_boundary(&sol, k).ok().flatten())
            .collect();
        sol
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn width(&self) -> usize {
        self.nodes.len()
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let w = self.width();
        &self.u[k * w..(k + 1) * w]
    }

    pub fn contact_slice(&self, k: usize) -> &[bool] {
        let w = self.width();
        &self.contact_mask[k * w..(k + 1) * w]
    }

    pub fn value(&self, k: usize, i: usize) -> f64 {
        self.u[k * self.width() + i]
    }

    pub fn in_contact(&self, k: usize, i: usize) -> bool {
        self.contact_mask[k * self.width() + i]
    }

    pub fn payoff_at(&self, i: usize) -> f64 {
        self.spec.payoff(self.nodes[i])
    }

    /// Row index whose time is closest to `t`.
    pub fn nearest_time_index(&self, t: f64) -> usize {
        let dt = self.params.expiry / self.grid.n_time as f64;
        ((t / dt).round().max(0.0) as usize).min(self.grid.n_time)
    }

    /// `r u^k - (u^{k+1} - u^k)/dt - A_h u^k` at an interior node of row
    /// `k < n_time`: the implicit Euler residual of the linear operator.
    pub fn parabolic_residual(&self, k: usize, i: usize) -> f64 {
        let h = self.grid.log_step();
        let stencil = Stencil::new(&self.params, h);
        self.parabolic_residual_with(&stencil, k, i)
    }

    pub(crate) fn parabolic_residual_with(&self, stencil: &Stencil, k: usize, i: usize) -> f64 {
        let dt = self.times[k + 1] - self.times[k];
        let row = self.slice(k);
        let next = self.value(k + 1, i);
        self.params.rate * row[i] - (next - row[i]) / dt - stencil.apply(row[i - 1], row[i], row[i + 1])
    }

    /// Largest `|min(u - g, dt * residual)|` over interior nodes and rows
    /// before expiry. Zero up to the PSOR tolerance for an implicit Euler
    /// obstacle solve.
    pub fn complementarity_residual(&self) -> f64 {
        let stencil = Stencil::new(&self.params, self.grid.log_step());
        let mut worst = 0.0f64;
        for k in 0..self.grid.n_time {
            let dt = self.times[k + 1] - self.times[k];
            for i in 1..self.width() - 1 {
                let gap = self.value(k, i) - self.payoff_at(i);
                let res = dt * self.parabolic_residual_with(&stencil, k, i);
                worst = worst.max(gap.min(res).abs());
            }
        }
        worst
    }

    fn locate_time(&self, t: f64) -> Result<(usize, f64)> {
        if !(t >= 0.0 && t <= self.params.expiry) {
            return Err(invalid("t", format!("{t} outside [0, {}]", self.params.expiry)));
        }
        let n = self.grid.n_time;
        let dt = self.params.expiry / n as f64;
        let k = ((t / dt).floor() as usize).min(n - 1);
        let w = ((t - self.times[k]) / (self.times[k + 1] - self.times[k])).clamp(0.0, 1.0);
        Ok((k, w))
    }

    fn locate_space(&self, x: f64) -> Result<(usize, f64)> {
        if !(x >= self.grid.x_min && x <= self.grid.x_max) {
            return Err(invalid(
                "x",
                format!("{x} outside the grid [{}, {}]", self.grid.x_min, self.grid.x_max),
            ));
        }
        let h = self.grid.log_step();
        let s = (x.ln() - self.grid.x_min.ln()) / h;
        let last = self.width() - 1;
        let j = (s.floor().max(0.0) as usize).min(last - 1);
        Ok((j, s))
    }

    /// Cubic Lagrange weights (value, derivative in node units) on the
    /// four nodes starting at the returned index.
    fn stencil_weights(&self, j: usize, s: f64) -> (usize, [f64; 4], [f64; 4]) {
        let last = self.width() - 1;
        let start = j.saturating_sub(1).min(last - 3);
        let z = s - start as f64;
        let mut w = [0.0; 4];
        let mut dw = [0.0; 4];
        for a in 0..4 {
            let xa = a as f64;
            let mut num = 1.0;
            let mut den = 1.0;
            for b in 0..4 {
                if b != a {
                    num *= z - b as f64;
                    den *= xa - b as f64;
                }
            }
            w[a] = num / den;
            let mut deriv = 0.0;
            for c in 0..4 {
                if c == a {
                    continue;
                }
                let mut prod = 1.0;
                for b in 0..4 {
                    if b != a && b != c {
                        prod *= z - b as f64;
                    }
                }
                deriv += prod;
            }
            dw[a] = deriv / den;
        }
        (start, w, dw)
    }

    /// Value at `(t, x)`: cubic in log-price, linear in time.
    pub fn value_at(&self, t: f64, x: f64) -> Result<f64> {
        let (k, wt) = self.locate_time(t)?;
        let (j, s) = self.locate_space(x)?;
        let (start, w, _) = self.stencil_weights(j, s);
        let eval = |row: &[f64]| (0..4).map(|a| w[a] * row[start + a]).sum::<f64>();
        Ok((1.0 - wt) * eval(self.slice(k)) + wt * eval(self.slice(k + 1)))
    }

    /// `sigma x du/dx = sigma du/d(ln x)` at `(t, x)`.
    pub fn log_gradient_at(&self, t: f64, x: f64) -> Result<f64> {
        let (k, wt) = self.locate_time(t)?;
        let (j, s) = self.locate_space(x)?;
        let (start, _, dw) = self.stencil_weights(j, s);
        let h = self.grid.log_step();
        let eval = |row: &[f64]| (0..4).map(|a| dw[a] * row[start + a]).sum::<f64>() / h;
        Ok(self.params.sigma * ((1.0 - wt) * eval(self.slice(k)) + wt * eval(self.slice(k + 1))))
    }

    /// Upper bound of the discrete comparison principle: `K` for a put,
    /// `x` for a call.
    pub fn upper_bound(&self, x: f64) -> f64 {
        match self.spec.kind {
            OptionKind::Put => self.spec.strike,
            OptionKind::Call => x,
        }
    }

    pub fn max_abs_difference(&self, other: &PdeSolution) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .u
            .iter()
            .zip(&other.u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn check_same_grid(&self, other: &PdeSolution) -> Result<()> {
        if self.grid != other.grid || self.params != other.params || self.spec != other.spec {
            return Err(crate::error::Error::Incompatible(
                "solutions are on different grids or contracts".into(),
            ));
        }
        Ok(())
    }
}
