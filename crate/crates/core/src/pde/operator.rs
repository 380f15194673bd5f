//! Discrete Black–Scholes operator in log-price and the theta-scheme
//! matrices built from it.

use crate::model::{MarketParams, OptionKind, OptionSpec};

/// Three-point stencil of `a u'' + b u'` in log-price, where `a = sigma^2/2`
/// and `b = r - d - sigma^2/2`. Central differences unless the cell Péclet
/// number forces upwinding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Stencil {
    pub lower: f64,
    pub center: f64,
    pub upper: f64,
}

impl Stencil {
    pub fn new(params: &MarketParams, h: f64) -> Self {
        let a = 0.5 * params.sigma * params.sigma;
        let b = params.log_drift();
        let diff = a / (h * h);
        let conv = b / (2.0 * h);
        if diff >= conv.abs() {
            Self {
                lower: diff - conv,
                center: -2.0 * diff,
                upper: diff + conv,
            }
        } else if b > 0.0 {
            Self {
                lower: diff,
                center: -2.0 * diff - b / h,
                upper: diff + b / h,
            }
        } else {
            Self {
                lower: diff - b / h,
                center: -2.0 * diff + b / h,
                upper: diff,
            }
        }
    }

    #[inline]
    pub fn apply(&self, left: f64, mid: f64, right: f64) -> f64 {
        self.lower * left + self.center * mid + self.upper * right
    }
}

/// Tridiagonal `M = I + theta dt (r - A)` over interior nodes, with
/// constant coefficients.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ThetaMatrix {
    pub lower: f64,
    pub diag: f64,
    pub upper: f64,
}

/// One backward sub-step from `t_next` down to `t_now`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SubStep {
    pub dt: f64,
    pub theta: f64,
    pub t_now: f64,
}

impl SubStep {
    pub fn matrix(&self, stencil: &Stencil, rate: f64) -> ThetaMatrix {
        let w = self.theta * self.dt;
        ThetaMatrix {
            lower: -w * stencil.lower,
            diag: 1.0 + w * (rate - stencil.center),
            upper: -w * stencil.upper,
        }
    }

    /// Explicit part applied to the later slice, with the boundary values of
    /// the new slice folded in. `next` and `boundary` include the two edge
    /// nodes; the output holds interior nodes only.
    pub fn rhs(&self, stencil: &Stencil, rate: f64, next: &[f64], boundary: (f64, f64), out: &mut [f64]) {
        let n = next.len() - 2;
        let w = (1.0 - self.theta) * self.dt;
        for i in 1..=n {
            let explicit = rate * next[i] - stencil.apply(next[i - 1], next[i], next[i + 1]);
            out[i - 1] = next[i] - w * explicit;
        }
        let m = self.matrix(stencil, rate);
        out[0] -= m.lower * boundary.0;
        out[n - 1] -= m.upper * boundary.1;
    }
}

/// Sub-steps for `n_time` steps of size `dt`, ordered backward from expiry.
pub(crate) fn schedule_substeps(times: &[f64], rannacher: bool) -> Vec<(usize, Vec<SubStep>)> {
    let n_time = times.len() - 1;
    let mut half_steps_left = if rannacher {
        super::grid::RANNACHER_HALF_STEPS
    } else {
        0
    };
    let mut out = Vec::with_capacity(n_time);
    for k in (0..n_time).rev() {
        let dt = times[k + 1] - times[k];
        let subs = if !rannacher {
            vec![SubStep {
                dt,
                theta: 1.0,
                t_now: times[k],
            }]
        } else if half_steps_left > 0 {
            half_steps_left = half_steps_left.saturating_sub(2);
            vec![
                SubStep {
                    dt: 0.5 * dt,
                    theta: 1.0,
                    t_now: times[k] + 0.5 * dt,
                },
                SubStep {
                    dt: 0.5 * dt,
                    theta: 1.0,
                    t_now: times[k],
                },
            ]
        } else {
            vec![SubStep {
                dt,
                theta: 0.5,
                t_now: times[k],
            }]
        };
        out.push((k, subs));
    }
    out
}

/// Dirichlet data at the truncation edges: the larger of the payoff and the
/// far-field European asymptote, so the put's lower edge is the
/// deep-exercise value and the call's upper edge is the discounted forward
/// minus discounted strike clipped at the payoff.
pub(crate) fn boundary_values(params: &MarketParams, spec: &OptionSpec, x_min: f64, x_max: f64, t: f64) -> (f64, f64) {
    let tau = (params.expiry - t).max(0.0);
    let df_r = (-params.rate * tau).exp();
    let df_d = (-params.dividend * tau).exp();
    let k = spec.strike;
    match spec.kind {
        OptionKind::Put => ((k * df_r - x_min * df_d).max(spec.payoff(x_min)), 0.0),
        OptionKind::Call => (0.0, (x_max * df_d - k * df_r).max(spec.payoff(x_max))),
    }
}
