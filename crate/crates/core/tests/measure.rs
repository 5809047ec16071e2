use lifecycle_core::market::{simulate_factor, DriftMode, MarketParams, PreferenceSpec, TimeGrid};
use lifecycle_core::math::McEstimate;
use lifecycle_core::measure::{
    deflator_path, martingale_check, radon_nikodym_path, risk_prices, zero_identity,
};
use proptest::prelude::*;

fn reference() -> MarketParams {
    MarketParams::constant(0.03, 0.07, 0.2, 0.1, -0.1, 1.0)
}

#[test]
fn density_is_a_martingale() {
    let p = reference();
    let grid = TimeGrid::new(10.0, 200).unwrap();
    let psi = vec![1.3; 200];
    let terminal: Vec<f64> = (0..20_000)
        .map(|k| {
            let b = simulate_factor(&p, &grid, 11, k, DriftMode::P).unwrap();
            *radon_nikodym_path(&p, &b, &psi).unwrap().last().unwrap()
        })
        .collect();
    let s = martingale_check(&terminal).unwrap();
    assert!(s.z_score.abs() <= 3.0, "{s:?}");
}

#[test]
fn brownian_drift_under_the_new_measure() {
    // E_Q[W1(T)] = nu T: reweight P samples by Lambda(T)
    let p = reference();
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let psi = vec![1.0; 50];
    let (nu, _) = risk_prices(&p, 0.0, 0.0, 1.0).unwrap();
    let w: Vec<f64> = (0..40_000)
        .map(|k| {
            let b = simulate_factor(&p, &grid, 3, k, DriftMode::P).unwrap();
            let l = radon_nikodym_path(&p, &b, &psi).unwrap();
            l[50] * b.w1.iter().sum::<f64>()
        })
        .collect();
    let e = McEstimate::from_samples(&w);
    assert!((e.mean - nu).abs() <= 3.0 * e.std_error, "{e:?} vs {nu}");
}

#[test]
fn deflator_matches_its_sde_to_first_order() {
    let p = reference();
    let pref = PreferenceSpec::new(0.02, 0.05, 0.5).unwrap();
    let coarse = TimeGrid::new(1.0, 50).unwrap();
    let fine = TimeGrid::new(1.0, 800).unwrap();
    let worst = |g: TimeGrid| {
        let b = simulate_factor(&p, &g, 5, 0, DriftMode::P).unwrap();
        let d = deflator_path(&p, &pref, &b, &vec![1.2; g.n_steps]).unwrap();
        d.sde_residual.iter().map(|r| r.abs()).fold(0.0, f64::max)
    };
    assert!(worst(fine) < worst(coarse) / 2.0);
}

proptest! {
    #[test]
    fn risk_prices_clear_the_excess_return(
        alpha in -0.5f64..0.5,
        beta in -1.0f64..1.0,
        sigma in 0.05f64..1.0,
        gamma in -0.9f64..2.0,
        lambda in 0.0f64..3.0,
        psi in 0.01f64..10.0,
    ) {
        let p = MarketParams::constant(0.03, alpha, beta, sigma, gamma, lambda);
        prop_assert!(zero_identity(&p, 0.0, 0.0, psi).unwrap().abs() < 1e-12);
    }
}
