use alloc::vec::Vec;

use super::{MarketParams, TimeGrid};
use crate::math::{exp, ln1p, powf, sqrt};
use crate::measure::risk_prices;
use crate::rng::PathRng;
use crate::{Error, Result};

/// A jump-risk measure `psi(t, z)`.
pub trait PsiPolicy: Sync {
    fn psi(&self, t: f64, z: f64) -> f64;
}

impl PsiPolicy for f64 {
    fn psi(&self, _t: f64, _z: f64) -> f64 {
        *self
    }
}

impl<F: Fn(f64, f64) -> f64 + Sync> PsiPolicy for F {
    fn psi(&self, t: f64, z: f64) -> f64 {
        self(t, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    P,
    Q,
    QTilde,
}

/// Which measure the increments are drawn under.
#[derive(Clone, Copy)]
pub enum DriftMode<'a> {
    P,
    /// Pricing measure selected by `psi`.
    Q(&'a dyn PsiPolicy),
    /// Measure under which the dual value is a plain expectation, for the
    /// given CRRA exponent.
    QTilde {
        psi: &'a dyn PsiPolicy,
        delta: f64,
    },
}

impl DriftMode<'_> {
    pub fn measure(&self) -> Measure {
        match self {
            DriftMode::P => Measure::P,
            DriftMode::Q(_) => Measure::Q,
            DriftMode::QTilde { .. } => Measure::QTilde,
        }
    }
}

/// One simulated path. Brownian increments are those of the `P`-Brownian
/// motions; `shift1`, `shift2` hold the per-step drift they carry under the
/// drawing measure (`dW^P = dW^M + shift dt`).
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub grid: TimeGrid,
    pub measure: Measure,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub n_jumps: Vec<u32>,
    pub psi: Vec<f64>,
    pub shift1: Vec<f64>,
    pub shift2: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
}

/// Increments of one time step.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Step {
    pub dw1: f64,
    pub dw2: f64,
    pub jumps: u32,
    pub psi: f64,
    pub shift1: f64,
    pub shift2: f64,
    pub z_next: f64,
}

/// Draws one Euler step of the factor from `(t, z)`. Draw order is fixed:
/// two normals, then the Poisson count, so equal intensities consume equal
/// randomness under every measure.
#[inline]
pub(crate) fn draw_step(
    p: &MarketParams,
    t: f64,
    dt: f64,
    z: f64,
    mode: &DriftMode<'_>,
    rng: &mut PathRng,
    node: usize,
) -> Result<Step> {
    let lambda = p.lambda.eval(t);
    let (psi, shift1, shift2, intensity) = match *mode {
        DriftMode::P => (1.0, 0.0, 0.0, lambda),
        DriftMode::Q(policy) => {
            let psi = policy.psi(t, z);
            let (nu, theta) = risk_prices(p, t, z, psi)?;
            (psi, nu, theta, psi * lambda)
        }
        DriftMode::QTilde { psi: policy, delta } => {
            let psi = policy.psi(t, z);
            let (nu, theta) = risk_prices(p, t, z, psi)?;
            let q = -delta / (1.0 - delta);
            (psi, q * nu, q * theta, powf(psi, q) * lambda)
        }
    };
    if !(psi > 0.0) {
        return Err(Error::NonPositivePsi { node, psi });
    }
    let sq = sqrt(dt);
    let e1 = rng.normal();
    let e2 = rng.normal();
    let c = p.corr_w1w2;
    let m1 = e1 * sq;
    let m2 = (c * e1 + sqrt(1.0 - c * c) * e2) * sq;
    let jumps = rng.poisson(intensity * dt);
    let dw1 = m1 + shift1 * dt;
    let dw2 = m2 + shift2 * dt;
    let drift = p.eta.eval(t, z);
    let z_next = z + drift * dt + dw1;
    if !drift.is_finite() || !z_next.is_finite() || !shift1.is_finite() || !shift2.is_finite() {
        return Err(Error::NonFinite {
            what: "factor drift",
            node,
        });
    }
    Ok(Step {
        dw1,
        dw2,
        jumps,
        psi,
        shift1,
        shift2,
        z_next,
    })
}

/// Euler-Maruyama path of the factor and the increments that drive it.
/// The asset level is left at `s0`; call [`simulate_asset`] to fill it.
pub fn simulate_factor(
    p: &MarketParams,
    grid: &TimeGrid,
    seed: u64,
    stream_id: u64,
    mode: DriftMode<'_>,
) -> Result<PathBundle> {
    let n = grid.n_steps;
    let dt = grid.dt();
    let mut rng = PathRng::new(seed, stream_id);
    let mut b = PathBundle {
        grid: *grid,
        measure: mode.measure(),
        w1: Vec::with_capacity(n),
        w2: Vec::with_capacity(n),
        n_jumps: Vec::with_capacity(n),
        psi: Vec::with_capacity(n),
        shift1: Vec::with_capacity(n),
        shift2: Vec::with_capacity(n),
        z: Vec::with_capacity(n + 1),
        s: alloc::vec![p.s0; n + 1],
    };
    let mut z = p.z0;
    b.z.push(z);
    for i in 0..n {
        let st = draw_step(p, grid.t(i), dt, z, &mode, &mut rng, i)?;
        b.w1.push(st.dw1);
        b.w2.push(st.dw2);
        b.n_jumps.push(st.jumps);
        b.psi.push(st.psi);
        b.shift1.push(st.shift1);
        b.shift2.push(st.shift2);
        z = st.z_next;
        b.z.push(z);
    }
    Ok(b)
}

/// Multiplicative step of the asset: log-Euler diffusion and an exact
/// `(1 + gamma)` factor per jump.
#[inline]
pub(crate) fn asset_log_step(
    p: &MarketParams,
    t: f64,
    z: f64,
    dt: f64,
    dw1: f64,
    dw2: f64,
    jumps: u32,
) -> f64 {
    let c = p.coefficients(t, z);
    let var = c.vol2() + 2.0 * p.corr_w1w2 * c.beta * c.sigma;
    let mut x = (c.alpha - 0.5 * var) * dt + c.beta * dw1 + c.sigma * dw2;
    if jumps > 0 {
        x += jumps as f64 * ln1p(c.gamma);
    }
    x
}

/// Fills `bundle.s` from its increments and factor path.
pub fn simulate_asset(p: &MarketParams, bundle: &mut PathBundle) -> Result<()> {
    let dt = bundle.grid.dt();
    bundle.s[0] = p.s0;
    for i in 0..bundle.grid.n_steps {
        let t = bundle.grid.t(i);
        let x = asset_log_step(
            p,
            t,
            bundle.z[i],
            dt,
            bundle.w1[i],
            bundle.w2[i],
            bundle.n_jumps[i],
        );
        let s = bundle.s[i] * exp(x);
        if !s.is_finite() {
            return Err(Error::NonFinite {
                what: "asset coefficient",
                node: i,
            });
        }
        bundle.s[i + 1] = s;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coef::Coef;

    #[test]
    fn driftless_factor_is_brownian() {
        let p = MarketParams::constant(0.03, 0.07, 0.2, 0.1, -0.1, 1.0);
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let b = simulate_factor(&p, &grid, 9, 0, DriftMode::P).unwrap();
        let mut w = p.z0;
        for i in 0..50 {
            w += b.w1[i];
            assert_eq!(b.z[i + 1], w);
        }
    }

    #[test]
    fn q_with_no_premium_matches_p() {
        let p = MarketParams::constant(0.03, 0.03, 0.2, 0.1, 0.0, 1.0);
        let grid = TimeGrid::new(2.0, 40).unwrap();
        let a = simulate_factor(&p, &grid, 3, 5, DriftMode::P).unwrap();
        let b = simulate_factor(&p, &grid, 3, 5, DriftMode::Q(&1.0)).unwrap();
        assert_eq!(a.z, b.z);
        assert_eq!(a.n_jumps, b.n_jumps);
    }

    #[test]
    fn zero_coefficients_leave_asset_flat() {
        let mut p = MarketParams::constant(0.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        p.s0 = 2.5;
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let mut b = simulate_factor(&p, &grid, 1, 0, DriftMode::P).unwrap();
        simulate_asset(&p, &mut b).unwrap();
        assert!(b.s.iter().all(|&s| s == 2.5));
    }

    #[test]
    fn forced_jump_halves_the_asset() {
        let p = MarketParams::constant(0.0, 0.0, 0.0, 0.0, -0.5, 0.0);
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let mut b = simulate_factor(&p, &grid, 1, 0, DriftMode::P).unwrap();
        b.n_jumps[2] = 1;
        simulate_asset(&p, &mut b).unwrap();
        assert_eq!(b.s[2], 1.0);
        assert!((b.s[3] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn non_finite_drift_is_reported_with_node() {
        let mut p = MarketParams::constant(0.03, 0.07, 0.2, 0.1, -0.1, 1.0);
        p.eta = Coef::Poly(alloc::vec![f64::NAN]);
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let err = simulate_factor(&p, &grid, 1, 0, DriftMode::P).unwrap_err();
        assert_eq!(
            err,
            Error::NonFinite {
                what: "factor drift",
                node: 0
            }
        );
    }
}
