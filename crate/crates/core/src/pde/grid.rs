use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{MarketParams, OptionSpec};

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Stepping {
    #[default]
    ImplicitEuler,
    /// Crank–Nicolson after four implicit half-steps from the payoff.
    CrankNicolsonRannacher,
}

/// Number of implicit Euler half-steps before Crank–Nicolson takes over.
pub const RANNACHER_HALF_STEPS: usize = 4;

/// Uniform grid in log-price `ln x` on `[x_min, x_max]` with `n_space`
/// interior nodes (plus two Dirichlet nodes) and `n_time` steps over `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_space: usize,
    pub n_time: usize,
    #[serde(default)]
    pub stepping: Stepping,
}

impl GridSpec {
    pub const COORDINATE: &'static str = "log-price";

    pub fn new(x_min: f64, x_max: f64, n_space: usize, n_time: usize, stepping: Stepping) -> Result<Self> {
        let grid = Self {
            x_min,
            x_max,
            n_space,
            n_time,
            stepping,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Default truncation `x_min = K e^{-6 sigma sqrt T}`, with the log step
    /// chosen so the strike sits on a node; `x_max` is `K e^{+6 sigma sqrt T}`
    /// when `n_space` is odd and one step further otherwise.
    pub fn for_contract(params: &MarketParams, spec: &OptionSpec, n_space: usize, n_time: usize) -> Result<Self> {
        if n_space < 3 {
            return Err(invalid("n_space", format!("need >= 3 interior nodes, got {n_space}")));
        }
        let half_width = 6.0 * params.sigma * params.expiry.sqrt();
        let below = n_space.div_ceil(2);
        let h = half_width / below as f64;
        let x_min = spec.strike * (-half_width).exp();
        let x_max = x_min * ((n_space + 1) as f64 * h).exp();
        Self::new(x_min, x_max, n_space, n_time, Stepping::ImplicitEuler)
    }

    pub fn with_stepping(mut self, stepping: Stepping) -> Self {
        self.stepping = stepping;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min.is_finite() && self.x_min > 0.0) {
            return Err(invalid("x_min", format!("must be finite and > 0, got {}", self.x_min)));
        }
        if !(self.x_max.is_finite() && self.x_max > self.x_min) {
            return Err(invalid("x_max", format!("must exceed x_min, got {}", self.x_max)));
        }
        if self.n_space < 3 {
            return Err(invalid(
                "n_space",
                format!("need >= 3 interior nodes, got {}", self.n_space),
            ));
        }
        if self.n_time < 1 {
            return Err(invalid("n_time", "need at least one time step"));
        }
        Ok(())
    }

    /// Checks `x_min < K < x_max`.
    pub fn validate_for(&self, spec: &OptionSpec) -> Result<()> {
        self.validate()?;
        if !(self.x_min < spec.strike && spec.strike < self.x_max) {
            return Err(invalid(
                "grid",
                format!("strike {} outside ({}, {})", spec.strike, self.x_min, self.x_max),
            ));
        }
        Ok(())
    }

    /// Interior plus the two boundary nodes.
    pub fn n_nodes(&self) -> usize {
        self.n_space + 2
    }

    pub fn log_step(&self) -> f64 {
        (self.x_max.ln() - self.x_min.ln()) / (self.n_space + 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.log_step();
        let base = self.x_min.ln();
        let n = self.n_nodes();
        let mut nodes: Vec<f64> = (0..n).map(|i| (base + i as f64 * h).exp()).collect();
        nodes[0] = self.x_min;
        nodes[n - 1] = self.x_max;
        nodes
    }

    /// Nodes with the one nearest the strike snapped onto it when it lies
    /// within rounding distance, so the payoff kink is exact.
    pub fn nodes_for(&self, strike: f64) -> Vec<f64> {
        let mut nodes = self.nodes();
        for x in nodes.iter_mut() {
            if (*x - strike).abs() <= 1e-12 * strike {
                *x = strike;
            }
        }
        nodes
    }

    pub fn times(&self, expiry: f64) -> Vec<f64> {
        let dt = expiry / self.n_time as f64;
        let mut t: Vec<f64> = (0..=self.n_time).map(|k| k as f64 * dt).collect();
        t[self.n_time] = expiry;
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strike_lands_on_a_node() {
        let params = MarketParams::new(0.05, 0.0, 0.2, 1.0).unwrap();
        let spec = OptionSpec::put(100.0).unwrap();
        for n in [3, 4, 99, 800, 801] {
            let grid = GridSpec::for_contract(&params, &spec, n, 10).unwrap();
            let nodes = grid.nodes_for(spec.strike);
            assert!(nodes.contains(&100.0), "n={n}");
            assert!((grid.x_min - 100.0 * (-1.2f64).exp()).abs() < 1e-12);
            grid.validate_for(&spec).unwrap();
        }
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(GridSpec::new(0.0, 10.0, 10, 10, Stepping::ImplicitEuler).is_err());
        assert!(GridSpec::new(5.0, 4.0, 10, 10, Stepping::ImplicitEuler).is_err());
        assert!(GridSpec::new(1.0, 4.0, 2, 10, Stepping::ImplicitEuler).is_err());
        assert!(GridSpec::new(1.0, 4.0, 3, 0, Stepping::ImplicitEuler).is_err());
        let g = GridSpec::new(50.0, 90.0, 10, 10, Stepping::ImplicitEuler).unwrap();
        assert!(g.validate_for(&OptionSpec::put(100.0).unwrap()).is_err());
    }
}
