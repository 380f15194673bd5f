use serde::{Deserialize, Serialize};

use super::solution::PdeSolution;
use crate::error::{Error, Result};
use crate::model::OptionKind;

/// Exercise boundary per time row of a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub kind: OptionKind,
    pub times: Vec<f64>,
    /// Free end of the contact interval, `None` when the slice has no contact.
    pub levels: Vec<Option<f64>>,
    pub contact_nodes: Vec<usize>,
}

impl BoundaryReport {
    /// Linear interpolation in time; `None` if either neighbouring row has
    /// no boundary.
    pub fn level_at(&self, t: f64) -> Option<f64> {
        let n = self.times.len();
        if n == 0 || t < self.times[0] || t > self.times[n - 1] {
            return None;
        }
        let k = self.times.partition_point(|&s| s <= t).clamp(1, n - 1) - 1;
        let (a, b) = (self.levels[k]?, self.levels[k + 1]?);
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        Some(a + w * (b - a))
    }
}

/// Contact interval endpoint for row `k`: `Ok(None)` for no contact,
/// `Err(())` if the contact set is not one interval at the proper end.
pub(crate) fn slice_boundary(sol: &PdeSolution, k: usize) -> std::result::Result<Option<f64>, ()> {
    let mask = sol.contact_slice(k);
    let n = mask.len();
    let count = mask.iter().filter(|c| **c).count();
    if count == 0 {
        return Ok(None);
    }
    let x = &sol.nodes;
    match sol.spec.kind {
        OptionKind::Put => {
            if mask[..count].iter().all(|c| *c) {
                Ok(Some(if count == n {
                    x[n - 1]
                } else {
                    (x[count - 1] * x[count]).sqrt()
                }))
            } else {
                Err(())
            }
        }
        OptionKind::Call => {
            let first = n - count;
            if mask[first..].iter().all(|c| *c) {
                Ok(Some(if first == 0 {
                    x[0]
                } else {
                    (x[first - 1] * x[first]).sqrt()
                }))
            } else {
                Err(())
            }
        }
    }
}

/// Exercise boundary from the contact mask, the log-midpoint between the
/// last contact node and the first free node. Any slice whose contact set
/// is not a single interval touching the low-price end (put) or the
/// high-price end (call) is reported as a structural violation.
pub fn extract_boundary(sol: &PdeSolution) -> Result<BoundaryReport> {
    let mut levels = Vec::with_capacity(sol.n_times());
    let mut contact_nodes = Vec::with_capacity(sol.n_times());
    let mut bad = Vec::new();
    for k in 0..sol.n_times() {
        contact_nodes.push(sol.contact_slice(k).iter().filter(|c| **c).count());
        match slice_boundary(sol, k) {
            Ok(level) => levels.push(level),
            Err(()) => {
                bad.push(k);
                levels.push(None);
            }
        }
    }
    if let Some(&first) = bad.first() {
        return Err(Error::StructuralViolation {
            side: match sol.spec.kind {
                OptionKind::Put => "low-price",
                OptionKind::Call => "high-price",
            },
            count: bad.len(),
            first_time: sol.times[first],
            slices: bad,
        });
    }
    Ok(BoundaryReport {
        kind: sol.spec.kind,
        times: sol.times.clone(),
        levels,
        contact_nodes,
    })
}
