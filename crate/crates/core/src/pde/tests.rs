use super::*;
use crate::error::Error;
use crate::lattice::{american_oracle, european_quadrature};
use crate::model::{EvalPoint, MarketParams, OptionSpec};
use crate::quadrature::integrate;

fn canonical() -> (MarketParams, OptionSpec) {
    (
        MarketParams::new(0.05, 0.0, 0.2, 1.0).unwrap(),
        OptionSpec::put(100.0).unwrap(),
    )
}

fn grid(params: &MarketParams, spec: &OptionSpec, n: usize) -> GridSpec {
    GridSpec::for_contract(params, spec, n, n).unwrap()
}

/// Worst relative gap to the European value at t = 0 over nodes within one
/// standard deviation of the strike.
fn european_gap(sol: &PdeSolution) -> f64 {
    let band = sol.params.sigma * sol.params.expiry.sqrt();
    let mut worst = 0.0f64;
    for (i, &x) in sol.nodes.iter().enumerate() {
        if (x / sol.spec.strike).ln().abs() > band {
            continue;
        }
        let e = european_quadrature(&sol.params, &sol.spec, &EvalPoint::at_spot(x).unwrap()).unwrap();
        worst = worst.max((sol.value(0, i) - e).abs() / e);
    }
    worst
}

#[test]
fn terminal_row_is_the_payoff() {
    let (params, spec) = canonical();
    let g = grid(&params, &spec, 60);
    for sol in [
        solve_obstacle(&params, &spec, &g).unwrap(),
        solve_penalized(&params, &spec, &g, 1e3).unwrap(),
        solve_semilinear(&params, &spec, &g).unwrap(),
    ] {
        let last = sol.slice(g.n_time);
        for (i, v) in last.iter().enumerate() {
            assert_eq!(*v, sol.payoff_at(i), "{}", sol.method);
        }
    }
}

#[test]
fn obstacle_respects_bounds_and_complementarity() {
    for spec in [OptionSpec::put(100.0).unwrap(), OptionSpec::call(100.0).unwrap()] {
        let params = MarketParams::new(0.05, 0.03, 0.25, 1.0).unwrap();
        let sol = solve_obstacle(&params, &spec, &grid(&params, &spec, 200)).unwrap();
        for k in 0..sol.n_times() {
            for (i, &x) in sol.nodes.iter().enumerate() {
                let v = sol.value(k, i);
                assert!(v >= sol.payoff_at(i), "below payoff at ({k}, {i})");
                assert!(v <= sol.upper_bound(x) + 1e-12);
                if sol.in_contact(k, i) {
                    assert!((v - sol.payoff_at(i)).abs() <= CONTACT_TOLERANCE * spec.strike);
                    assert!(spec.in_the_money(x));
                }
            }
        }
        assert!(sol.complementarity_residual() <= 1e-9 * spec.strike);
    }
}

#[test]
fn call_without_dividend_is_european() {
    let params = MarketParams::new(0.05, 0.0, 0.2, 1.0).unwrap();
    let spec = OptionSpec::call(100.0).unwrap();
    let sol = solve_obstacle(&params, &spec, &grid(&params, &spec, 400)).unwrap();
    let gap = european_gap(&sol);
    assert!(gap < 5e-4, "gap {gap}");
    let b = extract_boundary(&sol).unwrap();
    assert!(b.levels[..400].iter().all(Option::is_none));
}

#[test]
fn put_matches_the_tree() {
    let (params, spec) = canonical();
    let sol = solve_obstacle(&params, &spec, &grid(&params, &spec, 400)).unwrap();
    let point = EvalPoint::at_spot(100.0).unwrap();
    let oracle = american_oracle(&params, &spec, &point, 4000).unwrap().value;
    let v = sol.value_at(0.0, 100.0).unwrap();
    assert!((v - oracle).abs() / oracle < 1e-3, "{v} vs {oracle}");
}

#[test]
fn crank_nicolson_is_closer_to_the_tree() {
    let (params, spec) = canonical();
    let point = EvalPoint::at_spot(100.0).unwrap();
    let oracle = american_oracle(&params, &spec, &point, 4000).unwrap().value;
    let g = grid(&params, &spec, 200);
    let ie = solve_obstacle(&params, &spec, &g)
        .unwrap()
        .value_at(0.0, 100.0)
        .unwrap();
    let cn = solve_obstacle(&params, &spec, &g.with_stepping(Stepping::CrankNicolsonRannacher))
        .unwrap()
        .value_at(0.0, 100.0)
        .unwrap();
    assert!((cn - oracle).abs() < (ie - oracle).abs());
}

#[test]
fn wider_truncation_barely_moves_the_price() {
    let (params, spec) = canonical();
    let base = grid(&params, &spec, 199);
    let h = base.log_step();
    let wide = GridSpec::new(
        base.x_min * (-100.0 * h).exp(),
        base.x_max * (100.0 * h).exp(),
        399,
        199,
        Stepping::ImplicitEuler,
    )
    .unwrap();
    let a = solve_obstacle(&params, &spec, &base)
        .unwrap()
        .value_at(0.0, 100.0)
        .unwrap();
    let b = solve_obstacle(&params, &spec, &wide)
        .unwrap()
        .value_at(0.0, 100.0)
        .unwrap();
    assert!((a - b).abs() < 1e-8 * spec.strike, "{a} vs {b}");
}

#[test]
fn psor_reports_non_convergence() {
    let (params, spec) = canonical();
    let cfg = PsorConfig {
        max_sweeps: 1,
        ..PsorConfig::default()
    };
    let err = solve_obstacle_with(&params, &spec, &grid(&params, &spec, 100), &cfg).unwrap_err();
    assert!(matches!(err, Error::PsorNonConvergence { sweeps: 1, .. }));
}

#[test]
fn obstacle_price_is_monotone() {
    let point = 100.0;
    let price = |r: f64, sigma: f64, t: f64, k: f64| {
        let params = MarketParams::new(r, 0.0, sigma, t).unwrap();
        let spec = OptionSpec::put(k).unwrap();
        let g = GridSpec::new(20.0, 400.0, 299, 100, Stepping::ImplicitEuler).unwrap();
        solve_obstacle(&params, &spec, &g)
            .unwrap()
            .value_at(0.0, point)
            .unwrap()
    };
    let sigmas: Vec<f64> = [0.1, 0.2, 0.3].iter().map(|s| price(0.05, *s, 1.0, 100.0)).collect();
    let expiries: Vec<f64> = [0.25, 0.5, 1.0].iter().map(|t| price(0.05, 0.2, *t, 100.0)).collect();
    let strikes: Vec<f64> = [90.0, 100.0, 110.0].iter().map(|k| price(0.05, 0.2, 1.0, *k)).collect();
    for v in [sigmas, expiries, strikes] {
        assert!(v.windows(2).all(|w| w[1] > w[0]), "{v:?}");
    }
}

#[test]
fn penalty_ladder_converges_at_rate_one_over_n() {
    let (params, spec) = canonical();
    let g = grid(&params, &spec, 150);
    let obstacle = solve_obstacle(&params, &spec, &g).unwrap();
    let mut last = f64::INFINITY;
    let mut constants = Vec::new();
    for n in [1e2, 1e3, 1e4, 1e5] {
        let sol = solve_penalized(&params, &spec, &g, n).unwrap();
        let d = obstacle.max_abs_difference(&sol).unwrap();
        assert!(d < last);
        last = d;
        constants.push(n * sol.diagnostics.max_undershoot);
    }
    let (lo, hi) = constants
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), c| (a.min(*c), b.max(*c)));
    assert!(hi / lo < 1.1, "{constants:?}");
    assert!(solve_penalized(&params, &spec, &g, 0.5).is_err());
}

#[test]
fn penalty_stays_idle_without_exercise() {
    let params = MarketParams::new(0.05, 0.0, 0.2, 1.0).unwrap();
    let spec = OptionSpec::call(100.0).unwrap();
    let sol = solve_penalized(&params, &spec, &grid(&params, &spec, 100), 1e4).unwrap();
    assert_eq!(sol.diagnostics.max_active_nodes, 0);
    assert_eq!(sol.diagnostics.max_iterations, 1);
}

#[test]
fn semilinear_put_without_rate_is_european() {
    let params = MarketParams::new(0.0, 0.03, 0.2, 1.0).unwrap();
    let spec = OptionSpec::put(100.0).unwrap();
    let sol = solve_semilinear(&params, &spec, &grid(&params, &spec, 800)).unwrap();
    let gap = european_gap(&sol);
    assert!(gap < 5e-4, "gap {gap}");
}

#[test]
fn semilinear_tracks_obstacle() {
    let (params, spec) = canonical();
    let g = grid(&params, &spec, 400);
    let a = solve_obstacle(&params, &spec, &g).unwrap();
    let b = solve_semilinear(&params, &spec, &g).unwrap();
    assert!(a.max_abs_difference(&b).unwrap() <= 1e-3 * spec.strike);
}

#[test]
fn semilinear_obstacle_property_emerges_under_refinement() {
    let (params, spec) = canonical();
    let mut last = f64::INFINITY;
    for (factor, n) in [(1.0, 100), (0.5, 200), (0.25, 400)] {
        let sol = solve_semilinear(&params, &spec, &grid(&params, &spec, n)).unwrap();
        let dip = sol.diagnostics.max_undershoot;
        assert!(dip <= 1e-2 * spec.strike * factor);
        assert!(dip < last, "{dip} after {last}");
        last = dip;
    }
}

#[test]
fn put_boundary_rises_toward_the_strike() {
    let (params, spec) = canonical();
    let sol = solve_obstacle(&params, &spec, &grid(&params, &spec, 300)).unwrap();
    let b = extract_boundary(&sol).unwrap();
    let levels: Vec<f64> = b.levels.iter().map(|l| l.expect("put always has contact")).collect();
    assert!(levels.windows(2).all(|w| w[1] >= w[0]));
    assert!(levels.iter().all(|l| *l <= spec.strike));
    let h = sol.grid.log_step();
    let end = *levels.last().unwrap();
    assert!((end.ln() - spec.strike.ln()).abs() <= h);
    assert_eq!(b.contact_nodes.len(), sol.n_times());
}

#[test]
fn broken_contact_set_is_flagged() {
    let (params, spec) = canonical();
    let mut sol = solve_obstacle(&params, &spec, &grid(&params, &spec, 50)).unwrap();
    let w = sol.width();
    sol.contact_mask[3 * w + 2] = false;
    match extract_boundary(&sol) {
        Err(Error::StructuralViolation { slices, count, .. }) => {
            assert_eq!(slices, vec![3]);
            assert_eq!(count, 1);
        }
        other => panic!("expected a violation, got {other:?}"),
    }
}

#[test]
fn boundary_is_none_without_contact() {
    let params = MarketParams::new(0.05, 0.0, 0.2, 1.0).unwrap();
    let spec = OptionSpec::put(100.0).unwrap();
    let mut sol = solve_obstacle(&params, &spec, &grid(&params, &spec, 50)).unwrap();
    sol.contact_mask.iter_mut().for_each(|c| *c = false);
    let b = extract_boundary(&sol).unwrap();
    assert!(b.levels.iter().all(Option::is_none));
    assert_eq!(b.level_at(0.5), None);
}

#[test]
fn measure_lives_on_the_contact_set() {
    let (params, spec) = canonical();
    let sol = solve_obstacle(&params, &spec, &grid(&params, &spec, 200)).unwrap();
    let m = reconstruct_measure(&sol, &params, &spec).unwrap();
    for k in 0..sol.n_times() {
        for i in 0..sol.width() {
            let d = m.at(k, i);
            assert!(d >= 0.0);
            if sol.in_contact(k, i) {
                assert_eq!(d, params.rate * spec.strike);
            } else {
                assert_eq!(d, 0.0);
            }
        }
    }
    let other = OptionSpec::put(90.0).unwrap();
    assert!(reconstruct_measure(&sol, &params, &other).is_err());
}

#[test]
fn residual_matches_density_and_improves() {
    let (params, spec) = canonical();
    let coarse = solve_obstacle(&params, &spec, &grid(&params, &spec, 100)).unwrap();
    let fine = solve_obstacle(&params, &spec, &grid(&params, &spec, 200)).unwrap();
    let a = reconstruct_measure(&coarse, &params, &spec).unwrap();
    let b = reconstruct_measure(&fine, &params, &spec).unwrap();
    assert!(a.interior_cells > 0);
    assert!(b.discrepancy <= 5e-2);
    assert!(b.discrepancy < a.discrepancy);
}

#[test]
fn premium_vanishes_without_exercise() {
    let params = MarketParams::new(0.05, 0.0, 0.2, 1.0).unwrap();
    let call = OptionSpec::call(100.0).unwrap();
    let sol = solve_obstacle(&params, &call, &grid(&params, &call, 50)).unwrap();
    let b = extract_boundary(&sol).unwrap();
    let point = EvalPoint::at_spot(100.0).unwrap();
    assert_eq!(eep_premium(&params, &call, &point, &b).unwrap(), 0.0);

    let params = MarketParams::new(0.0, 0.02, 0.2, 1.0).unwrap();
    let put = OptionSpec::put(100.0).unwrap();
    let sol = solve_obstacle(&params, &put, &grid(&params, &put, 50)).unwrap();
    let b = extract_boundary(&sol).unwrap();
    assert_eq!(eep_premium(&params, &put, &point, &b).unwrap(), 0.0);
    assert!(eep_premium(&params, &call, &point, &b).is_err());
}

#[test]
fn european_plus_premium_is_american() {
    let (params, spec) = canonical();
    let sol = solve_obstacle(&params, &spec, &grid(&params, &spec, 800)).unwrap();
    let b = extract_boundary(&sol).unwrap();
    let point = EvalPoint::at_spot(100.0).unwrap();
    let premium = eep_premium(&params, &spec, &point, &b).unwrap();
    let euro = european_quadrature(&params, &spec, &point).unwrap();
    let oracle = american_oracle(&params, &spec, &point, 4000).unwrap().value;
    assert!(premium > 0.0);
    assert!((euro + premium - oracle).abs() / oracle < 2e-3);
}

#[test]
fn weighted_norm_examples() {
    let w = WeightSpec::default();
    let nodes: Vec<f64> = (0..=2000).map(|i| 0.5 + i as f64 * 0.001).collect();
    let zeros = vec![0.0; nodes.len()];
    assert_eq!(weighted_norm(&nodes, &zeros, &w).unwrap(), 0.0);
    let ones = vec![1.0; nodes.len()];
    let got = weighted_norm_squared(&nodes, &ones, &w).unwrap();
    let exact = integrate(|x| w.rho(x).powi(2), 0.5, 2.5, 1e-14, 0.0).unwrap().value;
    assert!((got - exact).abs() < 1e-7, "{got} vs {exact}");
    assert!(WeightSpec::new(0.75).is_err());
    assert!(weighted_norm(&nodes, &ones, &WeightSpec { alpha: 0.5 }).is_err());
    assert!(weighted_norm(&nodes[1..], &ones, &w).is_err());
    let times = [0.0, 1.0];
    let surface: Vec<f64> = ones.iter().chain(&ones).copied().collect();
    let s = weighted_norm_surface(&times, &nodes, &surface, &w).unwrap();
    assert!((s - got.sqrt()).abs() < 1e-12);
}

#[test]
fn interpolation_hits_nodes_and_gradient_matches_delta() {
    let params = MarketParams::new(0.05, 0.0, 0.2, 1.0).unwrap();
    let spec = OptionSpec::call(100.0).unwrap();
    let sol = solve_obstacle(&params, &spec, &grid(&params, &spec, 400)).unwrap();
    let i = 200;
    let x = sol.nodes[i];
    assert!((sol.value_at(sol.times[10], x).unwrap() - sol.value(10, i)).abs() < 1e-12);
    let point = EvalPoint::at_spot(100.0).unwrap();
    let delta = crate::lattice::european_delta_quadrature(&params, &spec, &point).unwrap();
    let z = sol.log_gradient_at(0.0, 100.0).unwrap();
    assert!((z - 0.2 * 100.0 * delta).abs() / (20.0 * delta) < 1e-3);
    assert!(sol.value_at(1.5, 100.0).is_err());
    assert!(sol.value_at(0.0, 1.0).is_err());
}
