use serde::{Deserialize, Serialize};

use super::operator::Stencil;
use super::solution::PdeSolution;
use crate::error::{Error, Result};
use crate::model::{MarketParams, OptionSpec};

/// Density of the reflection measure per unit time and price on the
/// solution grid, with the residual-based estimate kept for comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureDensity {
    pub times: Vec<f64>,
    pub nodes: Vec<f64>,
    /// `q(x, u)` on the contact mask, zero elsewhere.
    pub density: Vec<f64>,
    /// Implicit Euler residual `r u - D_t u - A_h u`; zero on the last row
    /// and at the boundary nodes.
    pub residual: Vec<f64>,
    /// Relative L1 gap between the two estimates over the contact interior.
    pub discrepancy: f64,
    pub interior_cells: usize,
}

impl MeasureDensity {
    pub fn at(&self, k: usize, i: usize) -> f64 {
        self.density[k * self.nodes.len() + i]
    }

    pub fn residual_at(&self, k: usize, i: usize) -> f64 {
        self.residual[k * self.nodes.len() + i]
    }
}

/// Reconstructs the exercise measure from a solution, returning the
/// formula `q(x, u)` and reporting its mismatch with the discrete residual.
/// The contact interior is the set of interior cells whose neighbours in
/// space and the following time row are also in contact.
pub fn reconstruct_measure(sol: &PdeSolution, params: &MarketParams, spec: &OptionSpec) -> Result<MeasureDensity> {
    if sol.params != *params || sol.spec != *spec {
        return Err(Error::Incompatible(
            "solution was computed for a different contract".into(),
        ));
    }
    let width = sol.width();
    let rows = sol.n_times();
    let stencil = Stencil::new(params, sol.grid.log_step());
    let mut density = vec![0.0; rows * width];
    let mut residual = vec![0.0; rows * width];
    let mut gap = 0.0;
    let mut mass = 0.0;
    let mut cells = 0;
    for k in 0..rows {
        for i in 0..width {
            if sol.in_contact(k, i) {
                density[k * width + i] = spec.exercise_rate(params, sol.nodes[i]);
            }
        }
        if k + 1 == rows {
            continue;
        }
        for i in 1..width - 1 {
            let res = sol.parabolic_residual_with(&stencil, k, i);
            residual[k * width + i] = res;
            let interior = sol.in_contact(k, i - 1)
                && sol.in_contact(k, i)
                && sol.in_contact(k, i + 1)
                && sol.in_contact(k + 1, i);
            if interior {
                let q = density[k * width + i];
                gap += (res - q).abs();
                mass += q.abs();
                cells += 1;
            }
        }
    }
    let discrepancy = if mass > 0.0 { gap / mass } else { 0.0 };
    Ok(MeasureDensity {
        times: sol.times.clone(),
        nodes: sol.nodes.clone(),
        density,
        residual,
        discrepancy,
        interior_cells: cells,
    })
}
