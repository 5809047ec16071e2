//! Reference solutions used by `verify`, written independently of the PDE
//! and LSM code in the core crate.

use lifecycle_core::coef::{Coef, GridTable, TimeFn};
use lifecycle_core::dual::PsiBounds;
use lifecycle_core::market::Model;

/// Minimiser of the jump penalty with no factor exposure, by safeguarded Newton.
///
/// The penalty in `x` is `lambda (x^q + d x/(1-d)) + c (g^2 l^2 x^2 - 2 (r-a) g l x)`
/// with `q = -d/(1-d)` and `c = d / (2 (1-d)^2 v)`; it is convex on `x > 0`.
pub fn psi_newton(
    r: f64,
    alpha: f64,
    beta: f64,
    sigma: f64,
    gamma: f64,
    lambda: f64,
    d: f64,
    bounds: PsiBounds,
) -> f64 {
    if lambda == 0.0 {
        return 1.0f64.clamp(bounds.min, bounds.max);
    }
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
    let (mut lo, mut hi) = (bounds.min, bounds.max);
    if f(lo) >= 0.0 {
        return lo;
    }
    if f(hi) <= 0.0 {
        return hi;
    }
    let mut x = 1.0f64.clamp(lo, hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            break;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = x - fx / df(x);
        x = if step > lo && step < hi {
            step
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 * hi {
            break;
        }
    }
    x
}

/// Effective discount rate of the annuity ODE at time `t` for a model whose
/// coefficients do not depend on `z`.
fn annuity_rate(model: &Model, bounds: PsiBounds, t: f64) -> f64 {
    let p = &model.market;
    let z = p.z0;
    let (r, alpha, beta, sigma, gamma, lambda) = (
        p.r.eval(t),
        p.alpha.eval(t, z),
        p.beta.eval(t, z),
        p.sigma.eval(t, z),
        p.gamma.eval(t, z),
        p.lambda.eval(t),
    );
    let d = model.prefs.delta;
    let e = 1.0 - d;
    let q = -d / e;
    let v = beta * beta + sigma * sigma;
    let psi = psi_newton(r, alpha, beta, sigma, gamma, lambda, d, bounds);
    let ex = r - alpha - gamma * psi * lambda;
    let rho = model.prefs.rho.eval(t);
    let r_tilde = rho / e
        - d * r / e
        - d * ex * ex / (2.0 * e * e * v)
        - (psi.powf(q) - 1.0 + d * (psi - 1.0) / e) * lambda;
    r_tilde + model.mortality.mu.eval(t) + model.prefs.kappa / e
}

/// `V(0)` from `V' = a(t) V - (1 + mu(t))`, `V(T) = 1`, classical RK4 backwards in time.
pub fn annuity_rk4(model: &Model, bounds: PsiBounds, n_steps: usize) -> f64 {
    let horizon = model.horizon();
    let rhs =
        |t: f64, y: f64| annuity_rate(model, bounds, t) * y - (1.0 + model.mortality.mu.eval(t));
    let h = -horizon / n_steps as f64;
    let mut y = 1.0;
    for i in 0..n_steps {
        let t = horizon + h * i as f64;
        let k1 = rhs(t, y);
        let k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1);
        let k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2);
        let k4 = rhs(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

/// Replaces every `z`-dependent coefficient by its value at `z0`, tabulated on `n_t + 1` times.
pub fn freeze_factor(model: &Model, n_t: usize) -> Model {
    let mut m = model.clone();
    let z0 = m.market.z0;
    let horizon = m.horizon();
    let ts: Vec<f64> = (0..=n_t).map(|i| horizon * i as f64 / n_t as f64).collect();
    let freeze = |c: &Coef| -> Coef {
        if c.is_z_free() {
            return c.clone();
        }
        let vals = ts.iter().map(|&t| c.eval(t, z0)).collect();
        Coef::Table(
            GridTable::new(ts.clone(), vec![z0], vals).expect("frozen table is well formed"),
        )
    };
    let p = &mut m.market;
    p.alpha = freeze(&p.alpha);
    p.beta = freeze(&p.beta);
    p.sigma = freeze(&p.sigma);
    p.gamma = freeze(&p.gamma);
    p.eta = Coef::Constant(0.0);
    m
}

pub fn scale_time_fn(f: &TimeFn, s: f64) -> TimeFn {
    match f {
        TimeFn::Constant(c) => TimeFn::Constant(s * c),
        TimeFn::Gompertz { base, growth } => TimeFn::Gompertz {
            base: s * base,
            growth: *growth,
        },
        TimeFn::Table { ts, values } => TimeFn::Table {
            ts: ts.clone(),
            values: values.iter().map(|v| s * v).collect(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newton_matches_the_closed_form_condition() {
        // reference market, d = 1/2: -x^-2 + 0.84 + 0.4 x = 0
        let x = psi_newton(0.03, 0.07, 0.2, 0.1, -0.1, 1.0, 0.5, PsiBounds::default());
        assert!((-x.powi(-2) + 0.84 + 0.4 * x).abs() < 1e-12);
        let none = psi_newton(0.03, 0.07, 0.2, 0.1, 0.0, 1.0, 0.5, PsiBounds::default());
        assert!((none - 1.0).abs() < 1e-12);
    }
}
