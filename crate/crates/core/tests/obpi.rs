use lifecycle_core::dual::{solve_pde, PdeGrid, PsiBounds};
use lifecycle_core::market::{
    IncomeSpec, MarketParams, Measure, Model, MortalityCurve, PreferenceSpec, TimeGrid,
};
use lifecycle_core::obpi::{
    admissibility_check, obpi_wealth, ratchet_fraction, restricted_strategy, ObpiPlan,
    RatchetState, RunOptions,
};
use lifecycle_core::put::{GuaranteeSpec, PutConfig, PutPaths};
use lifecycle_core::strategy::WealthEngine;
use proptest::prelude::*;

fn model(ell: f64) -> Model {
    let mut market = MarketParams::constant(0.03, 0.07, 0.2, 0.1, -0.1, 1.0);
    market.x0 = 10.0;
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

fn config(n: usize) -> PutConfig {
    PutConfig {
        n_paths: n,
        seed: 17,
        ..PutConfig::default()
    }
}

#[test]
fn zero_floor_holds_and_budget_is_met() {
    let m = model(1.0);
    let dual = solve_pde(&m, PdeGrid::around(&m, 100, 21), PsiBounds::default()).unwrap();
    let e = WealthEngine::new(&m, &dual, TimeGrid::new(10.0, 200).unwrap(), Measure::Q).unwrap();
    let paths = PutPaths::simulate(&e, GuaranteeSpec::zero(), config(10_000)).unwrap();
    let plan = ObpiPlan::build(&paths, 10.0, 1e-8).unwrap();
    assert!((plan.x_hat0() - 10.0).abs() <= 1e-8);
    assert!(plan.initial.rho0 > 0.0 && plan.initial.rho0 < 1.0);
    let rep = admissibility_check(&plan, RunOptions::default()).unwrap();
    assert_eq!(rep.violations, 0);
    assert!(
        rep.martingale_holds(),
        "{:?} budget {}",
        rep.martingale,
        rep.martingale_budget
    );

    // negative control: put values lowered below intrinsic
    let bad = admissibility_check(&plan, RunOptions { put_bias: 0.5 }).unwrap();
    assert!(bad.violations > 0 && bad.violating_paths > 0);
}

#[test]
fn restricted_paths_scale_the_unrestricted_strategy() {
    let m = model(1.0);
    let dual = solve_pde(&m, PdeGrid::around(&m, 50, 21), PsiBounds::default()).unwrap();
    let e = WealthEngine::new(&m, &dual, TimeGrid::new(10.0, 100).unwrap(), Measure::Q).unwrap();
    let paths = PutPaths::simulate(&e, GuaranteeSpec::zero(), config(2_000)).unwrap();
    let plan = ObpiPlan::build(&paths, 10.0, 1e-8).unwrap();
    let ids: Vec<usize> = (0..50).collect();
    let rs = obpi_wealth(&plan, &ids, RunOptions::default()).unwrap();
    let mut saw_event = false;
    for r in &rs {
        assert!(r.rho.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(r.rho[0], plan.initial.rho0);
        for j in 0..r.t.len() {
            let (c, _, _) = restricted_strategy(&m, &dual, 1.0, r.y_star[j], r.t[j], 0.0).unwrap();
            assert!((r.c_hat[j] / c - r.rho[j]).abs() < 1e-12);
            assert_eq!(r.c_hat[j], r.p_hat[j]);
            assert!(r.x_hat[j] >= r.k_floor[j] - plan.tol[j]);
        }
        for ev in &r.events {
            saw_event = true;
            let j = r.t.iter().position(|t| *t == ev.t).unwrap();
            assert_eq!(r.rho[j], ev.new);
        }
    }
    assert!(saw_event);
}

#[test]
fn no_income_means_no_insurance_needed() {
    let m = model(0.0);
    let dual = solve_pde(&m, PdeGrid::around(&m, 50, 21), PsiBounds::default()).unwrap();
    let e = WealthEngine::new(&m, &dual, TimeGrid::new(10.0, 100).unwrap(), Measure::Q).unwrap();
    let paths = PutPaths::simulate(&e, GuaranteeSpec::zero(), config(1_000)).unwrap();
    let plan = ObpiPlan::build(&paths, 10.0, 1e-8).unwrap();
    assert_eq!(plan.initial.rho0, 1.0);
    assert_eq!(plan.quote.price, 0.0);
}

proptest! {
    #[test]
    fn ratchet_is_a_running_maximum(
        rho0 in 0.01f64..1.0,
        steps in proptest::collection::vec((0.0f64..2.0, 0.1f64..5.0), 1..50),
    ) {
        let mut s = RatchetState::new(rho0).unwrap();
        let mut prev = rho0;
        let mut expect = rho0;
        for (i, (b, y)) in steps.iter().enumerate() {
            let r = ratchet_fraction(&mut s, i as f64, *b, *y).unwrap();
            expect = expect.max(b / y);
            prop_assert!(r >= prev);
            prop_assert_eq!(r, expect);
            prev = r;
        }
    }

    #[test]
    fn restricted_strategy_is_linear_in_the_fraction(rho in 0.01f64..3.0, y in 0.1f64..50.0) {
        let m = model(1.0);
        let dual = solve_pde(&m, PdeGrid::around(&m, 10, 11), PsiBounds::default()).unwrap();
        let one = restricted_strategy(&m, &dual, 1.0, y, 1.0, 0.0).unwrap();
        let r = restricted_strategy(&m, &dual, rho, y, 1.0, 0.0).unwrap();
        prop_assert!((r.0 - rho * one.0).abs() <= 1e-12 * r.0.abs());
        prop_assert!((r.1 - rho * one.1).abs() <= 1e-12 * r.1.abs());
        prop_assert!((r.2 - rho * one.2).abs() <= 1e-12 * r.2.abs());
    }
}
