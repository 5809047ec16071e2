use lifecycle_core::dual::{solve_pde, PdeGrid, PsiBounds};
use lifecycle_core::market::{
    IncomeSpec, MarketParams, Measure, Model, MortalityCurve, PreferenceSpec, TimeGrid,
};
use lifecycle_core::strategy::{allocation_residuals, optimal_allocation, WealthEngine};
use proptest::prelude::*;

fn model(x0: f64, ell: f64) -> Model {
    let mut market = MarketParams::constant(0.03, 0.07, 0.2, 0.1, -0.1, 1.0);
    market.x0 = x0;
    Model {
        market,
        mortality: MortalityCurve {
            mu: 0.01.into(),
            horizon: 10.0,
        },
        income: IncomeSpec { ell: ell.into() },
        prefs: PreferenceSpec::new(0.02, 0.05, 0.5).unwrap(),
    }
}

#[test]
fn budget_and_martingale_identities_hold_under_q() {
    let m = model(10.0, 1.0);
    let dual = solve_pde(&m, PdeGrid::around(&m, 100, 21), PsiBounds::default()).unwrap();
    let e = WealthEngine::new(&m, &dual, TimeGrid::new(10.0, 200).unwrap(), Measure::Q).unwrap();
    let r = e.run(20_000, 5).unwrap();
    assert!(
        (r.budget.mean - r.y0).abs() <= 3.0 * r.budget.std_error,
        "{r:?}"
    );
    assert!((r.martingale_mean() - 10.0).abs() <= 3.0 * r.budget.std_error);
    assert!(r.c_equals_p && r.min_consumption > 0.0);
}

#[test]
fn consumption_equals_premium_bitwise_on_every_node() {
    let m = model(10.0, 1.0);
    let dual = solve_pde(&m, PdeGrid::around(&m, 50, 21), PsiBounds::default()).unwrap();
    let e = WealthEngine::new(&m, &dual, TimeGrid::new(10.0, 100).unwrap(), Measure::P).unwrap();
    for k in 0..20 {
        let path = e.path(3, k).unwrap();
        assert!(path
            .c
            .iter()
            .zip(&path.p)
            .all(|(c, p)| c.to_bits() == p.to_bits() && *c > 0.0));
        // Y* = X* + g by construction
        assert!((path.y[0] - path.x[0] - (e.y0() - 10.0)).abs() < 1e-12);
    }
}

#[test]
fn doubling_wealth_and_income_doubles_the_strategy() {
    let a = model(10.0, 1.0);
    let b = model(20.0, 2.0);
    let dual = solve_pde(&a, PdeGrid::around(&a, 50, 21), PsiBounds::default()).unwrap();
    let grid = TimeGrid::new(10.0, 100).unwrap();
    let ea = WealthEngine::new(&a, &dual, grid, Measure::P).unwrap();
    let eb = WealthEngine::new(&b, &dual, grid, Measure::P).unwrap();
    for k in 0..10 {
        let pa = ea.path(8, k).unwrap();
        let pb = eb.path(8, k).unwrap();
        for i in 0..pa.t.len() {
            for (x, y) in [(pa.y[i], pb.y[i]), (pa.c[i], pb.c[i]), (pa.pi[i], pb.pi[i])] {
                assert!((y / (2.0 * x) - 1.0).abs() < 1e-12, "node {i}: {x} {y}");
            }
        }
    }
}

#[test]
fn primal_value_stays_below_the_dual_bound() {
    let m = model(10.0, 1.0);
    let dual = solve_pde(&m, PdeGrid::around(&m, 100, 21), PsiBounds::default()).unwrap();
    let sol = lifecycle_core::dual::DualSolution::new(&m, dual.clone()).unwrap();
    let e = WealthEngine::new(&m, &dual, TimeGrid::new(10.0, 200).unwrap(), Measure::P).unwrap();
    let r = e.run(20_000, 4).unwrap();
    assert!(r.primal.mean <= sol.dual_value + 3.0 * r.primal.std_error);
    assert!((r.primal.mean / sol.dual_value - 1.0).abs() < 0.02);
}

proptest! {
    #[test]
    fn allocation_solves_the_loading_equations_without_jumps(
        alpha in -0.2f64..0.3,
        beta in 0.05f64..0.5,
        delta in prop_oneof![-2.0f64..-0.1, 0.1f64..0.9],
        y in 0.1f64..100.0,
    ) {
        // only the W1 equation is solved when sigma = 0 and there are no jumps
        let p = MarketParams::constant(0.03, alpha, beta, 0.0, 0.0, 0.0);
        let pref = PreferenceSpec::new(0.02, 0.0, delta).unwrap();
        let pi = optimal_allocation(&p, &pref, 1.0, 0.0, 0.0, y).unwrap();
        let r = allocation_residuals(&p, &pref, 1.0, 0.0, 0.0, y, pi).unwrap();
        prop_assert!(r.iter().all(|e| e.abs() <= 1e-10 * y));
    }
}
