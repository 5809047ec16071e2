use lifecycle_core::coef::Coef;
use lifecycle_core::dual::{
    cross_check, minimize_psi, optimal_zeta, solve_pde, DualSolution, PdeGrid, PsiBounds,
    UtilitySpec,
};
use lifecycle_core::market::{IncomeSpec, MarketParams, Model, MortalityCurve, PreferenceSpec};
use proptest::prelude::*;

fn model(gamma: f64, delta: f64) -> Model {
    let mut market = MarketParams::constant(0.03, 0.07, 0.2, 0.1, gamma, 1.0);
    market.x0 = 10.0;
    Model {
        market,
        mortality: MortalityCurve {
            mu: 0.01.into(),
            horizon: 10.0,
        },
        income: IncomeSpec { ell: 1.0.into() },
        prefs: PreferenceSpec::new(0.02, 0.05, delta).unwrap(),
    }
}

/// Jump multiplier from the first-order condition with `h_z = 0`, by Newton.
fn psi_foc(r: f64, alpha: f64, beta: f64, sigma: f64, gamma: f64, lambda: f64, d: f64) -> f64 {
    let v = beta * beta + sigma * sigma;
    let e = 1.0 - d;
    let q = -d / e;
    let c = d / (2.0 * e * e * v);
    let f = |x: f64| {
        lambda * (q * x.powf(q - 1.0) + d / e)
            + c * (2.0 * gamma * gamma * lambda * lambda * x - 2.0 * (r - alpha) * gamma * lambda)
    };
    let df = |x: f64| {
        lambda * q * (q - 1.0) * x.powf(q - 2.0) + c * 2.0 * gamma * gamma * lambda * lambda
    };
    let mut x = 1.0;
    for _ in 0..100 {
        x -= f(x) / df(x);
    }
    x
}

/// `V(0)` from `V' = a V - (1 + mu)`, `V(T) = 1`, by classical RK4.
fn annuity_rk4(
    r: f64,
    alpha: f64,
    beta: f64,
    sigma: f64,
    gamma: f64,
    lambda: f64,
    mu: f64,
    rho: f64,
    kappa: f64,
    d: f64,
    horizon: f64,
) -> f64 {
    let psi = psi_foc(r, alpha, beta, sigma, gamma, lambda, d);
    let v = beta * beta + sigma * sigma;
    let e = 1.0 - d;
    let q = -d / e;
    let ex = r - alpha - gamma * psi * lambda;
    let r_tilde = rho / e
        - d * r / e
        - d * ex * ex / (2.0 * e * e * v)
        - (psi.powf(q) - 1.0 + d * (psi - 1.0) / e) * lambda;
    let a = r_tilde + mu + kappa / e;
    let rhs = |y: f64| a * y - (1.0 + mu);
    let n = 4000;
    let h = -horizon / n as f64;
    let mut y = 1.0;
    for _ in 0..n {
        let k1 = rhs(y);
        let k2 = rhs(y + 0.5 * h * k1);
        let k3 = rhs(y + 0.5 * h * k2);
        let k4 = rhs(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

#[test]
fn no_jump_risk_keeps_the_physical_intensity() {
    let m = model(0.0, 0.5);
    let g = solve_pde(&m, PdeGrid::around(&m, 40, 41), PsiBounds::default()).unwrap();
    assert!(g.psi_hat.iter().all(|p| (p - 1.0).abs() <= 1e-8));
}

#[test]
fn reference_jump_multiplier_solves_the_first_order_condition() {
    let m = model(-0.1, 0.5);
    let opt = minimize_psi(&m.market, &m.prefs, 0.0, 0.0, 0.0, PsiBounds::default()).unwrap();
    let oracle = psi_foc(0.03, 0.07, 0.2, 0.1, -0.1, 1.0, 0.5);
    assert!((opt.psi - oracle).abs() < 1e-8, "{} vs {oracle}", opt.psi);
    // -psi^-2 + 0.84 + 0.4 psi = 0
    assert!((-oracle.powi(-2) + 0.84 + 0.4 * oracle).abs() < 1e-12);
}

#[test]
fn factor_free_pde_matches_the_annuity_ode() {
    for (gamma, delta) in [(-0.1, 0.5), (0.0, 0.5), (-0.1, -1.0), (0.2, 0.3)] {
        let m = model(gamma, delta);
        let g = solve_pde(&m, PdeGrid::around(&m, 400, 21), PsiBounds::default()).unwrap();
        let pde = g.annuity(0.0, 0.0);
        let ode = annuity_rk4(
            0.03, 0.07, 0.2, 0.1, gamma, 1.0, 0.01, 0.02, 0.05, delta, 10.0,
        );
        assert!(
            (pde / ode - 1.0).abs() < 1e-4,
            "gamma {gamma} delta {delta}: {pde} vs {ode}"
        );
        let first = &g.h[..g.n_z()];
        assert!(first.iter().all(|h| (h - first[0]).abs() < 1e-12));
    }
}

#[test]
fn factor_dependent_pde_agrees_with_monte_carlo() {
    let mut m = model(-0.1, 0.5);
    m.market.alpha = Coef::affine(0.07, 0.01);
    m.market.eta = Coef::Ou {
        speed: 0.5,
        mean: 0.0,
    };
    let cc = cross_check(
        &m,
        PdeGrid::around(&m, 100, 101),
        PsiBounds::default(),
        20_000,
        200,
        9,
    )
    .unwrap();
    assert!(cc.mc.fine.std_error > 0.0);
    assert!(cc.passes(), "{cc:?}");
}

#[test]
fn multiplier_reproduces_initial_wealth() {
    let m = model(-0.1, 0.5);
    let sol = DualSolution::solve(&m, PdeGrid::around(&m, 100, 21), PsiBounds::default()).unwrap();
    // x0 + g0 = zeta^{-1/(1-d)} H
    let w = sol.zeta_hat.powf(-1.0 / (1.0 - 0.5)) * sol.annuity0();
    assert!((w - sol.y0).abs() < 1e-10 * sol.y0);
}

proptest! {
    #[test]
    fn conjugate_is_attained_at_the_inverse_marginal(
        delta in prop_oneof![-3.0f64..-0.1, 0.1f64..0.9],
        kappa in 0.0f64..0.2,
        t in 0.0f64..20.0,
        y in 0.01f64..10.0,
        x in 0.01f64..50.0,
    ) {
        let u = UtilitySpec { kappa, delta };
        let i = u.marginal_inverse(t, y);
        let at = u.utility(t, i) - i * y;
        prop_assert!((at - u.dual(t, y)).abs() <= 1e-10 * (1.0 + at.abs()));
        prop_assert!(u.utility(t, x) - x * y <= u.dual(t, y) + 1e-10 * (1.0 + at.abs()));
    }

    #[test]
    fn optimal_multiplier_beats_neighbours(
        gamma in -0.5f64..0.5,
        alpha in 0.0f64..0.15,
        delta in 0.1f64..0.8,
        hz in -0.5f64..0.5,
    ) {
        let p = MarketParams::constant(0.03, alpha, 0.2, 0.1, gamma, 1.0);
        let pref = PreferenceSpec::new(0.02, 0.0, delta).unwrap();
        let b = PsiBounds::default();
        let opt = minimize_psi(&p, &pref, 0.0, 0.0, hz, b).unwrap();
        let k = |psi: f64| lifecycle_core::dual::jump_penalty_k(&p, &pref, 0.0, 0.0, hz, psi).unwrap();
        for s in [0.9, 0.99, 1.01, 1.1] {
            let other = (opt.psi * s).clamp(b.min, b.max);
            prop_assert!(opt.value <= k(other) + 1e-12);
        }
    }

    #[test]
    fn zeta_minimises_the_dual_functional(x0 in 0.1f64..100.0, g0 in 0.0f64..50.0, h in 0.1f64..30.0, delta in 0.1f64..0.9) {
        let (z, v) = optimal_zeta(x0, g0, h, delta).unwrap();
        for s in [0.98, 1.02] {
            prop_assert!(v <= lifecycle_core::dual::dual_functional(z * s, h, x0, g0, delta) + 1e-12 * v.abs());
        }
    }
}
