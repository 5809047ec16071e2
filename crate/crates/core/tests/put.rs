use lifecycle_core::dual::{solve_pde, PdeGrid, PsiBounds};
use lifecycle_core::market::{
    IncomeSpec, MarketParams, Measure, Model, MortalityCurve, PreferenceSpec, TimeGrid,
};
use lifecycle_core::put::{generator_residual, GuaranteeKind, GuaranteeSpec, PutConfig, PutPaths};
use lifecycle_core::strategy::WealthEngine;

fn model(alpha: f64, gamma: f64) -> Model {
    let mut market = MarketParams::constant(0.03, alpha, 0.2, 0.1, gamma, 1.0);
    market.x0 = 10.0;
    Model {
        market,
        mortality: MortalityCurve {
            mu: 0.01.into(),
            horizon: 10.0,
        },
        income: IncomeSpec { ell: 1.0.into() },
        prefs: PreferenceSpec::new(0.02, 0.05, 0.5).unwrap(),
    }
}

fn config(n: usize) -> PutConfig {
    PutConfig {
        n_paths: n,
        seed: 21,
        ..PutConfig::default()
    }
}

#[test]
fn deterministic_market_matches_dynamic_programming() {
    // alpha = r, gamma = 0: no premia, Y* is deterministic
    let m = model(0.03, 0.0);
    let dual = solve_pde(&m, PdeGrid::around(&m, 100, 21), PsiBounds::default()).unwrap();
    let e = WealthEngine::new(&m, &dual, TimeGrid::new(10.0, 200).unwrap(), Measure::Q).unwrap();
    let paths = PutPaths::simulate(&e, GuaranteeSpec::zero(), config(200)).unwrap();
    for rho in [0.3, 0.6, 0.9] {
        let nd = paths.n_dates();
        let mut v = 0.0f64;
        for j in (0..nd).rev() {
            let y = rho * paths.y_star(j, 0);
            let pay = paths.discount[j] * (paths.human_capital[j] - y).max(0.0);
            v = v.max(pay);
        }
        let q = paths.lsm(rho);
        assert!((q.price - v).abs() < 1e-8, "rho {rho}: {} vs {v}", q.price);
    }
}

#[test]
fn price_bounds_and_monotonicity() {
    let m = model(0.07, -0.1);
    let dual = solve_pde(&m, PdeGrid::around(&m, 100, 21), PsiBounds::default()).unwrap();
    let e = WealthEngine::new(&m, &dual, TimeGrid::new(10.0, 200).unwrap(), Measure::Q).unwrap();
    let paths = PutPaths::simulate(&e, GuaranteeSpec::zero(), config(10_000)).unwrap();
    let quotes: Vec<_> = [0.45, 0.5, 0.55].iter().map(|&r| paths.lsm(r)).collect();
    for q in &quotes {
        assert!(q.price >= q.intrinsic0 - 3.0 * q.std_error);
        assert!(q.price >= q.european - 3.0 * q.std_error - 3.0 * q.european_se);
    }
    assert!(quotes[0].price >= quotes[1].price && quotes[1].price >= quotes[2].price);
    assert!(!quotes[1].boundary.is_empty());
}

#[test]
fn rate_guarantee_uses_the_accrual_state() {
    let m = model(0.07, -0.1);
    let dual = solve_pde(&m, PdeGrid::around(&m, 50, 21), PsiBounds::default()).unwrap();
    let e = WealthEngine::new(&m, &dual, TimeGrid::new(10.0, 100).unwrap(), Measure::Q).unwrap();
    let spec = GuaranteeSpec {
        kind: GuaranteeKind::RateGuarantee,
        r_g: 0.01.into(),
        base: 5.0,
    };
    let paths = PutPaths::simulate(&e, spec, config(2_000)).unwrap();
    assert!(paths.uses_d);
    // D(0) = 0 and k(0) = base
    let x = paths.state(0, 0, 0.5);
    assert_eq!(x[1], 0.0);
    assert!((paths.strike(0, 0.0) - paths.human_capital[0] - 5.0).abs() < 1e-12);
    let q = paths.lsm(0.5);
    assert!(q.price.is_finite() && q.price >= q.intrinsic0 - 3.0 * q.std_error);
}

#[test]
fn generator_annihilates_discounted_constants() {
    let m = model(0.07, -0.1);
    let dual = solve_pde(&m, PdeGrid::around(&m, 50, 21), PsiBounds::default()).unwrap();
    // phi = e^{-int_t^T (r + mu)} solves A phi = (r + mu) phi
    let phi = |t: f64, _y: f64, _z: f64| (-(0.04) * (10.0 - t)).exp();
    let r = generator_residual(&m, &dual, phi, 2.0, 5.0, 0.0).unwrap();
    assert!(r.abs() < 1e-6, "{r}");
}
