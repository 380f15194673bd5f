use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Polynomial weight `rho(x) = (1 + x^2)^(-alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub alpha: f64,
}

impl WeightSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.75) {
            return Err(invalid("alpha", format!("must exceed 3/4, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn rho(&self, x: f64) -> f64 {
        (1.0 + x * x).powf(-self.alpha)
    }
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

/// Trapezoid approximation of `int u^2 rho^2 dx` over the price nodes.
pub fn weighted_norm_squared(nodes: &[f64], values: &[f64], weight: &WeightSpec) -> Result<f64> {
    WeightSpec::new(weight.alpha)?;
    if nodes.len() != values.len() {
        return Err(invalid(
            "values",
            format!("{} values for {} nodes", values.len(), nodes.len()),
        ));
    }
    let f: Vec<f64> = nodes
        .iter()
        .zip(values)
        .map(|(x, u)| {
            let r = weight.rho(*x);
            u * u * r * r
        })
        .collect();
    Ok(nodes
        .windows(2)
        .zip(f.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum())
}

/// Weighted L2 norm of one slice.
pub fn weighted_norm(nodes: &[f64], values: &[f64], weight: &WeightSpec) -> Result<f64> {
    weighted_norm_squared(nodes, values, weight).map(f64::sqrt)
}

/// Space-time weighted L2 norm of a time-major surface, trapezoid in both
/// directions.
pub fn weighted_norm_surface(times: &[f64], nodes: &[f64], surface: &[f64], weight: &WeightSpec) -> Result<f64> {
    let w = nodes.len();
    if surface.len() != times.len() * w {
        return Err(invalid(
            "surface",
            format!("{} values for a {}x{} grid", surface.len(), times.len(), w),
        ));
    }
    let slices = surface
        .chunks(w)
        .map(|row| weighted_norm_squared(nodes, row, weight))
        .collect::<Result<Vec<_>>>()?;
    if times.len() == 1 {
        return Ok(slices[0].sqrt());
    }
    let total: f64 = times
        .windows(2)
        .zip(slices.windows(2))
        .map(|(t, s)| 0.5 * (t[1] - t[0]) * (s[0] + s[1]))
        .sum();
    Ok(total.sqrt())
}
