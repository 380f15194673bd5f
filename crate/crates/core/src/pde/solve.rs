use serde::{Deserialize, Serialize};

use super::grid::{GridSpec, Stepping};
use super::operator::{boundary_values, schedule_substeps, Stencil, ThetaMatrix};
use super::solution::{PdeMethod, PdeSolution, SolveDiagnostics};
use super::tridiag::solve_in_place;
use crate::error::{invalid, Error, Result};
use crate::model::{MarketParams, OptionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsorConfig {
    pub omega: f64,
    /// Residual tolerance as a fraction of the strike.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for PsorConfig {
    fn default() -> Self {
        Self {
            omega: 1.5,
            tolerance: 1e-9,
            max_sweeps: 10_000,
        }
    }
}

pub const NEWTON_TOLERANCE: f64 = 1e-10;
pub const NEWTON_MAX_ITERATIONS: usize = 200;
pub const FIXED_POINT_TOLERANCE: f64 = 1e-10;
pub const FIXED_POINT_MAX_ITERATIONS: usize = 50;
pub const DAMPING: f64 = 0.5;
const DAMPED_MAX_ITERATIONS: usize = 80;
/// A damped step that still moves more than this fraction of the strike
/// counts as cycling.
const CYCLING_THRESHOLD: f64 = 1e-6;

/// Linear system of one backward sub-step on interior nodes.
struct SliceProblem<'a> {
    step: usize,
    dt: f64,
    matrix: ThetaMatrix,
    rhs: &'a [f64],
    obstacle: &'a [f64],
    rate: &'a [f64],
}

/// Backward march shared by the three formulations. `solver` receives the
/// sub-step problem and the previous interior values, which it overwrites.
fn march<F>(
    params: &MarketParams,
    spec: &OptionSpec,
    grid: &GridSpec,
    mut solver: F,
) -> Result<(Vec<f64>, SolveDiagnostics)>
where
    F: FnMut(&SliceProblem, &mut [f64], &mut SolveDiagnostics) -> Result<()>,
{
    grid.validate_for(spec)?;
    let nodes = grid.nodes_for(spec.strike);
    let width = nodes.len();
    let n = width - 2;
    let times = grid.times(params.expiry);
    let stencil = Stencil::new(params, grid.log_step());
    let obstacle: Vec<f64> = nodes[1..=n].iter().map(|&x| spec.payoff(x)).collect();
    // Exercise is only possible strictly in the money; elsewhere a value
    // that underflows onto the zero payoff must not switch the source on.
    let rate: Vec<f64> = nodes[1..=n]
        .iter()
        .map(|&x| {
            if spec.in_the_money(x) {
                spec.exercise_rate(params, x)
            } else {
                0.0
            }
        })
        .collect();

    let mut u = vec![0.0; times.len() * width];
    for (slot, &x) in u[grid.n_time * width..].iter_mut().zip(&nodes) {
        *slot = spec.payoff(x);
    }
    let mut current: Vec<f64> = u[grid.n_time * width..].to_vec();
    let mut rhs = vec![0.0; n];
    let mut diag = SolveDiagnostics::default();
    let rannacher = grid.stepping == Stepping::CrankNicolsonRannacher;

    for (k, subs) in schedule_substeps(&times, rannacher) {
        for sub in subs {
            let edges = boundary_values(params, spec, grid.x_min, grid.x_max, sub.t_now);
            sub.rhs(&stencil, params.rate, &current, edges, &mut rhs);
            let problem = SliceProblem {
                step: k,
                dt: sub.dt,
                matrix: sub.matrix(&stencil, params.rate),
                rhs: &rhs,
                obstacle: &obstacle,
                rate: &rate,
            };
            let mut interior = current[1..=n].to_vec();
            solver(&problem, &mut interior, &mut diag)?;
            current[0] = edges.0;
            current[1..=n].copy_from_slice(&interior);
            current[n + 1] = edges.1;
        }
        u[k * width..(k + 1) * width].copy_from_slice(&current);
    }
    Ok((u, diag))
}

fn note_iterations(diag: &mut SolveDiagnostics, iterations: usize, residual: f64) {
    diag.total_iterations += iterations;
    diag.max_iterations = diag.max_iterations.max(iterations);
    diag.max_residual = diag.max_residual.max(residual);
}

/// Obstacle problem by projected SOR at every step.
pub fn solve_obstacle(params: &MarketParams, spec: &OptionSpec, grid: &GridSpec) -> Result<PdeSolution> {
    solve_obstacle_with(params, spec, grid, &PsorConfig::default())
}

pub fn solve_obstacle_with(
    params: &MarketParams,
    spec: &OptionSpec,
    grid: &GridSpec,
    cfg: &PsorConfig,
) -> Result<PdeSolution> {
    if !(cfg.omega > 0.0 && cfg.omega < 2.0) {
        return Err(invalid("omega", format!("must lie in (0, 2), got {}", cfg.omega)));
    }
    let tol = cfg.tolerance * spec.strike;
    let (u, diag) = march(params, spec, grid, |p, x, diag| {
        let (sweeps, residual) = psor(p, x, cfg.omega, tol, cfg.max_sweeps);
        if residual > tol {
            return Err(Error::PsorNonConvergence {
                step: p.step,
                sweeps,
                residual,
            });
        }
        note_iterations(diag, sweeps, residual);
        diag.max_active_nodes = diag
            .max_active_nodes
            .max(x.iter().zip(p.obstacle).filter(|(u, g)| u <= g).count());
        Ok(())
    })?;
    Ok(PdeSolution::assemble(
        *grid,
        *params,
        *spec,
        PdeMethod::Obstacle,
        u,
        diag,
    ))
}

/// Returns (sweeps, final complementarity residual).
fn psor(p: &SliceProblem, x: &mut [f64], omega: f64, tol: f64, max_sweeps: usize) -> (usize, f64) {
    let n = x.len();
    let m = p.matrix;
    for (v, g) in x.iter_mut().zip(p.obstacle) {
        *v = v.max(*g);
    }
    let mut residual = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        for i in 0..n {
            let left = if i > 0 { x[i - 1] } else { 0.0 };
            let right = if i + 1 < n { x[i + 1] } else { 0.0 };
            let gs = (p.rhs[i] - m.lower * left - m.upper * right) / m.diag;
            x[i] = (x[i] + omega * (gs - x[i])).max(p.obstacle[i]);
        }
        residual = complementarity(p, x);
        if residual <= tol {
            return (sweep, residual);
        }
    }
    (max_sweeps, residual)
}

fn complementarity(p: &SliceProblem, x: &[f64]) -> f64 {
    let n = x.len();
    let m = p.matrix;
    let mut worst = 0.0f64;
    for i in 0..n {
        let left = if i > 0 { x[i - 1] } else { 0.0 };
        let right = if i + 1 < n { x[i + 1] } else { 0.0 };
        let res = m.lower * left + m.diag * x[i] + m.upper * right - p.rhs[i];
        worst = worst.max((x[i] - p.obstacle[i]).min(res).abs());
    }
    worst
}

/// Penalized problem `... = r u - n (u - g)^-`, penalty implicit, solved
/// per step by semismooth Newton (policy iteration) on the active set.
pub fn solve_penalized(params: &MarketParams, spec: &OptionSpec, grid: &GridSpec, penalty: f64) -> Result<PdeSolution> {
    if !(penalty.is_finite() && penalty >= 1.0) {
        return Err(invalid("penalty", format!("must be finite and >= 1, got {penalty}")));
    }
    let tol = NEWTON_TOLERANCE * spec.strike;
    let n = grid.n_space;
    let mut diag_buf = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut active = vec![false; n];
    let (u, diag) = march(params, spec, grid, |p, x, diag| {
        let weight = p.dt * penalty;
        for (a, (v, g)) in active.iter_mut().zip(x.iter().zip(p.obstacle)) {
            *a = v < g;
        }
        let mut update = f64::INFINITY;
        for iteration in 1..=NEWTON_MAX_ITERATIONS {
            for i in 0..n {
                let pen = if active[i] { weight } else { 0.0 };
                diag_buf[i] = p.matrix.diag + pen;
                rhs[i] = p.rhs[i] + pen * p.obstacle[i];
            }
            solve_in_place(p.matrix.lower, &diag_buf, p.matrix.upper, &mut rhs, &mut scratch);
            update = rhs.iter().zip(x.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            x.copy_from_slice(&rhs);
            let mut changed = false;
            let mut count = 0;
            for i in 0..n {
                let now = x[i] < p.obstacle[i];
                changed |= now != active[i];
                active[i] = now;
                count += now as usize;
            }
            if !changed || update <= tol {
                note_iterations(diag, iteration, if changed { update } else { 0.0 });
                diag.max_active_nodes = diag.max_active_nodes.max(count);
                return Ok(());
            }
        }
        Err(Error::NewtonDivergence {
            step: p.step,
            iterations: NEWTON_MAX_ITERATIONS,
            update,
        })
    })?;
    Ok(PdeSolution::assemble(
        *grid,
        *params,
        *spec,
        PdeMethod::Penalized { penalty },
        u,
        diag,
    ))
}

/// Semilinear problem `... = r u - q(x, u)` with the exercise source
/// implicit. The indicator is frozen at the previous iterate; if the active
/// set keeps flipping, the weights of the flipping nodes are bisected
/// toward the value that balances them, starting from the damping factor.
pub fn solve_semilinear(params: &MarketParams, spec: &OptionSpec, grid: &GridSpec) -> Result<PdeSolution> {
    let tol = FIXED_POINT_TOLERANCE * spec.strike;
    let eps = spec.indicator_tolerance();
    let n = grid.n_space;
    let mut diag_buf = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut flipped = vec![false; n];
    let (u, diag) = march(params, spec, grid, |p, x, diag| {
        diag_buf.fill(p.matrix.diag);
        let mut solve = |w: &[f64], out: &mut [f64]| {
            for i in 0..n {
                rhs[i] = p.rhs[i] + p.dt * p.rate[i] * w[i];
            }
            solve_in_place(p.matrix.lower, &diag_buf, p.matrix.upper, &mut rhs, &mut scratch);
            let movement = rhs
                .iter()
                .zip(out.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            out.copy_from_slice(&rhs);
            movement
        };
        let indicator = |i: usize, v: f64| {
            if p.rate[i] > 0.0 && v <= p.obstacle[i] + eps {
                1.0
            } else {
                0.0
            }
        };

        for i in 0..n {
            weights[i] = indicator(i, x[i]);
        }
        flipped.fill(false);
        let mut movement = f64::INFINITY;
        let mut iterations = FIXED_POINT_MAX_ITERATIONS;
        for iteration in 1..=FIXED_POINT_MAX_ITERATIONS {
            movement = solve(&weights, x);
            let mut changed = false;
            let mut cycled = false;
            for i in 0..n {
                let w = indicator(i, x[i]);
                if w != weights[i] {
                    changed = true;
                    cycled |= flipped[i];
                    flipped[i] = true;
                    weights[i] = w;
                }
            }
            if !changed {
                note_iterations(diag, iteration, 0.0);
                diag.max_active_nodes = diag.max_active_nodes.max(weights.iter().filter(|w| **w > 0.0).count());
                return Ok(());
            }
            if cycled || (movement <= tol && iteration > 1) {
                iterations = iteration;
                break;
            }
        }

        // Damped phase: bisect the weights of nodes that flipped. Raising a
        // weight raises every component of the solution, so each bracket
        // shrinks toward the weight at which the node sits on the payoff.
        diag.damped_steps += 1;
        let mut lo = vec![0.0; n];
        let mut hi = vec![1.0; n];
        for i in 0..n {
            if flipped[i] {
                weights[i] = DAMPING;
            }
        }
        for _ in 0..DAMPED_MAX_ITERATIONS {
            iterations += 1;
            movement = solve(&weights, x);
            let mut settled = true;
            for i in 0..n {
                let on = indicator(i, x[i]);
                if flipped[i] {
                    if on > 0.0 {
                        lo[i] = weights[i];
                    } else {
                        hi[i] = weights[i];
                    }
                    weights[i] = lo[i] + DAMPING * (hi[i] - lo[i]);
                } else if on != weights[i] {
                    flipped[i] = true;
                    settled = false;
                    weights[i] = DAMPING;
                }
            }
            if settled && movement <= tol {
                break;
            }
        }
        if movement > CYCLING_THRESHOLD * spec.strike {
            return Err(Error::ActiveSetCycling {
                step: p.step,
                iterations,
                movement,
            });
        }
        note_iterations(diag, iterations, movement);
        diag.max_active_nodes = diag.max_active_nodes.max(weights.iter().filter(|w| **w > 0.0).count());
        Ok(())
    })?;
    Ok(PdeSolution::assemble(
        *grid,
        *params,
        *spec,
        PdeMethod::Semilinear,
        u,
        diag,
    ))
}
