//! Market prices of risk for a jump-measure candidate `psi`, the density
//! process `Lambda` of the pricing measure and the state-price deflator.

use alloc::vec::Vec;

use crate::market::MarketParams;
use crate::market::{PathBundle, PreferenceSpec};
use crate::math::{cumulative_simpson, exp, ln, McEstimate};
use crate::{Error, Result};

/// Girsanov drifts `(nu, theta)` of `W1` and `W2` under the measure selected by `psi`.
#[inline]
pub fn risk_prices(p: &MarketParams, t: f64, z: f64, psi: f64) -> Result<(f64, f64)> {
    let c = p.coefficients(t, z);
    let v = c.vol2();
    if !(v > 0.0) {
        return Err(Error::SingularMarket { t, z });
    }
    let excess = c.r - c.alpha - c.gamma * psi * c.lambda;
    Ok((c.beta / v * excess, c.sigma / v * excess))
}

/// `(alpha - r) + beta nu + sigma theta + gamma psi lambda`, zero up to rounding.
pub fn zero_identity(p: &MarketParams, t: f64, z: f64, psi: f64) -> Result<f64> {
    let (nu, theta) = risk_prices(p, t, z, psi)?;
    let c = p.coefficients(t, z);
    Ok((c.alpha - c.r) + c.beta * nu + c.sigma * theta + c.gamma * psi * c.lambda)
}

/// Increment of `ln Lambda` over one step. Exact in distribution for
/// step-constant `nu`, `theta`, `psi`: the Gaussian and Poisson parts are
/// each mean-one exponentials.
#[inline]
#[allow(clippy::too_many_arguments)]
pub fn log_density_step(
    nu: f64,
    theta: f64,
    psi: f64,
    lambda: f64,
    dt: f64,
    dw1: f64,
    dw2: f64,
    jumps: u32,
) -> f64 {
    let mut x =
        ((1.0 - psi) * lambda - 0.5 * theta * theta - 0.5 * nu * nu) * dt + nu * dw1 + theta * dw2;
    if jumps > 0 {
        x += jumps as f64 * ln(psi);
    }
    x
}

/// `Lambda` at every node of `bundle`, using `psi_path[i]` on step `i`
/// (left endpoint, so `psi` is predictable).
pub fn radon_nikodym_path(
    p: &MarketParams,
    bundle: &PathBundle,
    psi_path: &[f64],
) -> Result<Vec<f64>> {
    let grid = bundle.grid;
    let dt = grid.dt();
    let mut out = Vec::with_capacity(grid.n_steps + 1);
    let mut log_l = 0.0;
    out.push(1.0);
    for i in 0..grid.n_steps {
        let psi = psi_path[i];
        if !(psi > 0.0) {
            return Err(Error::NonPositivePsi { node: i, psi });
        }
        let t = grid.t(i);
        let (nu, theta) = risk_prices(p, t, bundle.z[i], psi)?;
        log_l += log_density_step(
            nu,
            theta,
            psi,
            p.lambda.eval(t),
            dt,
            bundle.w1[i],
            bundle.w2[i],
            bundle.n_jumps[i],
        );
        out.push(exp(log_l));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DeflatorPath {
    pub lambda_path: Vec<f64>,
    pub gamma_path: Vec<f64>,
    pub psi_path: Vec<f64>,
    /// Relative gap per step between one Euler step of the deflator SDE
    /// started on the closed form and the closed form at the next node.
    pub sde_residual: Vec<f64>,
}

/// `Gamma = Lambda e^{int (rho - r)}` along the path, with the Euler consistency residual.
pub fn deflator_path(
    p: &MarketParams,
    pref: &PreferenceSpec,
    bundle: &PathBundle,
    psi_path: &[f64],
) -> Result<DeflatorPath> {
    let grid = bundle.grid;
    let dt = grid.dt();
    let lambda_path = radon_nikodym_path(p, bundle, psi_path)?;
    let cum = cumulative_simpson(
        |s| pref.rho.eval(s) - p.r.eval(s),
        0.0,
        grid.horizon,
        grid.n_steps,
    );
    let gamma_path: Vec<f64> = lambda_path
        .iter()
        .zip(&cum)
        .map(|(l, c)| l * exp(*c))
        .collect();
    let mut sde_residual = Vec::with_capacity(grid.n_steps);
    for i in 0..grid.n_steps {
        let t = grid.t(i);
        let psi = psi_path[i];
        let (nu, theta) = risk_prices(p, t, bundle.z[i], psi)?;
        let lambda = p.lambda.eval(t);
        let g = gamma_path[i]
            * (1.0
                + (pref.rho.eval(t) - p.r.eval(t)) * dt
                + nu * bundle.w1[i]
                + theta * bundle.w2[i]
                + (psi - 1.0) * (bundle.n_jumps[i] as f64 - lambda * dt));
        sde_residual.push((g - gamma_path[i + 1]) / gamma_path[i + 1]);
    }
    Ok(DeflatorPath {
        lambda_path,
        gamma_path,
        psi_path: psi_path.to_vec(),
        sde_residual,
    })
}

/// Sample statistics of terminal densities; the caller asserts `|z| <= 3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleStats {
    pub mean: f64,
    pub std_error: f64,
    pub z_score: f64,
}

pub fn martingale_check(samples: &[f64]) -> Result<MartingaleStats> {
    if samples.len() < 1000 {
        return Err(Error::TooFewSamples {
            needed: 1000,
            got: samples.len(),
        });
    }
    let e = McEstimate::from_samples(samples);
    Ok(MartingaleStats {
        mean: e.mean,
        std_error: e.std_error,
        z_score: e.z_score(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{simulate_factor, DriftMode, TimeGrid};

    fn reference() -> MarketParams {
        MarketParams::constant(0.03, 0.07, 0.2, 0.1, -0.1, 1.0)
    }

    #[test]
    fn risk_prices_at_reference_point() {
        let p = reference();
        let (nu, theta) = risk_prices(&p, 0.0, 0.0, 1.0).unwrap();
        // 0.2 / 0.05 * (0.03 - 0.07 + 0.1)
        assert!((nu - 0.24).abs() < 1e-14);
        assert!((theta - 0.12).abs() < 1e-14);
        assert!(zero_identity(&p, 0.0, 0.0, 1.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn degenerate_cases() {
        let p = MarketParams::constant(0.03, 0.03, 0.2, 0.1, 0.0, 1.0);
        assert_eq!(risk_prices(&p, 0.0, 0.0, 1.0).unwrap(), (0.0, 0.0));
        let p = MarketParams::constant(0.03, 0.07, 0.0, 0.1, -0.1, 1.0);
        assert_eq!(risk_prices(&p, 0.0, 0.0, 1.7).unwrap().0, 0.0);
        let p = MarketParams::constant(0.03, 0.07, 0.0, 0.0, -0.1, 1.0);
        assert!(matches!(
            risk_prices(&p, 0.0, 0.0, 1.0),
            Err(Error::SingularMarket { .. })
        ));
    }

    #[test]
    fn identity_density_without_premia() {
        let p = MarketParams::constant(0.03, 0.03, 0.2, 0.1, 0.0, 1.0);
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let b = simulate_factor(&p, &grid, 4, 2, DriftMode::P).unwrap();
        let l = radon_nikodym_path(&p, &b, &[1.0; 20]).unwrap();
        assert!(l.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn one_forced_jump_with_doubled_intensity() {
        // no diffusion premium: alpha - r = -gamma psi lambda
        let p = MarketParams::constant(0.0, 0.4, 0.2, 0.1, -0.2, 1.0);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let mut b = simulate_factor(&p, &grid, 4, 2, DriftMode::P).unwrap();
        b.n_jumps = alloc::vec![0; 10];
        b.n_jumps[3] = 1;
        let l = radon_nikodym_path(&p, &b, &[2.0; 10]).unwrap();
        let dt = 0.1;
        // hand evaluation: exp((1 - 2) lambda dt) per step, times 2 at the jump
        assert!((l[3] - exp(-3.0 * dt)).abs() < 1e-14);
        assert!((l[4] - 2.0 * exp(-4.0 * dt)).abs() < 1e-14);
        assert!(radon_nikodym_path(&p, &b, &[0.0; 10]).is_err());
    }

    #[test]
    fn deflator_is_deterministic_without_risk() {
        let p = MarketParams::constant(0.03, 0.03, 0.2, 0.1, 0.0, 1.0);
        let pref = PreferenceSpec::new(0.05, 0.0, 0.5).unwrap();
        let grid = TimeGrid::new(10.0, 50).unwrap();
        let b = simulate_factor(&p, &grid, 4, 2, DriftMode::P).unwrap();
        let d = deflator_path(&p, &pref, &b, &[1.0; 50]).unwrap();
        assert!((d.gamma_path[50] - exp(0.2)).abs() < 1e-12);
        let same = PreferenceSpec::new(0.03, 0.0, 0.5).unwrap();
        let d = deflator_path(&p, &same, &b, &[1.0; 50]).unwrap();
        assert_eq!(d.gamma_path, d.lambda_path);
    }

    #[test]
    fn martingale_check_needs_samples() {
        assert!(martingale_check(&[1.0; 10]).is_err());
        let s = martingale_check(&[1.0; 1000]).unwrap();
        assert_eq!((s.mean, s.std_error, s.z_score), (1.0, 0.0, 0.0));
    }
}
