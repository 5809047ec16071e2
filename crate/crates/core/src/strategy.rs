//! Unrestricted optimal strategy and the optimal wealth-plus-human-capital
//! process `Y* = X* + g`.
//!
//! Along a path `Y*` is advanced multiplicatively:
//!
//! ```text
//! dY/Y = [r + mu - (1 + mu)/H] dt - nu/(1-d) dW1^Q - theta/(1-d) dW2^Q + (psi^{-1/(1-d)} - 1) dN~^Q
//! ```
//!
//! Each step uses the exact exponential of the Gaussian part and an exact
//! `(1 + J)^{dN}` jump factor, so `e^{-int(r+mu)} Y` plus the discounted
//! consumption stream is a discrete martingale under `Q` and not only in the limit.

use alloc::vec::Vec;

use crate::dual::DualGrid;
use crate::market::sim::{asset_log_step, draw_step};
use crate::market::{
    DeterministicTables, DriftMode, MarketParams, Measure, Model, PreferenceSpec, PsiPolicy,
    TimeGrid,
};
use crate::math::{exp, expm1, ln1p, powf, McEstimate};
use crate::measure::risk_prices;
use crate::par::map_indices;
use crate::rng::PathRng;
use crate::{Error, Result};

/// `c* = p* = y / H(t, z)`.
#[inline]
pub fn optimal_consumption_insurance(annuity: f64, y: f64, t: f64) -> Result<(f64, f64)> {
    if !(annuity > 0.0) {
        return Err(Error::NonPositiveAnnuity { t, value: annuity });
    }
    let c = y / annuity;
    Ok((c, c))
}

/// Jump size of `Y*`, `psi^{-1/(1-d)} - 1`.
#[inline]
pub fn jump_ratio(psi: f64, delta: f64) -> f64 {
    powf(psi, -1.0 / (1.0 - delta)) - 1.0
}

/// Amount held in the risky asset.
pub fn optimal_allocation(
    p: &MarketParams,
    pref: &PreferenceSpec,
    psi: f64,
    t: f64,
    z: f64,
    y: f64,
) -> Result<f64> {
    let c = p.coefficients(t, z);
    let den = c.beta + c.sigma + c.gamma;
    if den == 0.0 {
        return Err(Error::SingularAllocation { t, z });
    }
    let (nu, theta) = risk_prices(p, t, z, psi)?;
    let e = 1.0 - pref.delta;
    Ok((jump_ratio(psi, pref.delta) - nu / e - theta / e) / den * y)
}

/// Residuals of the three loading equations `pi beta = -nu y/(1-d)`,
/// `pi sigma = -theta y/(1-d)`, `pi gamma = J y`.
pub fn allocation_residuals(
    p: &MarketParams,
    pref: &PreferenceSpec,
    psi: f64,
    t: f64,
    z: f64,
    y: f64,
    pi: f64,
) -> Result<[f64; 3]> {
    let c = p.coefficients(t, z);
    let (nu, theta) = risk_prices(p, t, z, psi)?;
    let e = 1.0 - pref.delta;
    Ok([
        pi * c.beta + nu * y / e,
        pi * c.sigma + theta * y / e,
        pi * c.gamma - jump_ratio(psi, pref.delta) * y,
    ])
}

/// State at one node of a simulated path. `y` is for unit initial wealth
/// when the path was started from `y0 = 1`.
#[derive(Debug, Clone, Copy)]
pub struct Node {
    pub i: usize,
    pub t: f64,
    pub z: f64,
    pub s: f64,
    pub y: f64,
    pub annuity: f64,
    pub psi: f64,
    /// `e^{-int_0^t (r + mu)}`
    pub discount: f64,
    /// Discounted consumption plus insurance premium paid over `[t_i, t_{i+1}]`:
    /// `discount * y * (1 - e^{-int (1+mu)/H})`; zero at the last node.
    pub payout: f64,
    /// Consumption rate `int (1+mu)/H` over the step divided by the step length.
    pub payout_rate: f64,
    /// Jumps of `N` on `[t_i, t_{i+1}]`.
    pub jumps: u32,
}

/// Simulates `Y*` along paths for a solved dual grid.
pub struct WealthEngine<'a> {
    pub model: &'a Model,
    pub dual: &'a DualGrid,
    pub tables: DeterministicTables,
    pub measure: Measure,
}

impl<'a> WealthEngine<'a> {
    pub fn new(
        model: &'a Model,
        dual: &'a DualGrid,
        grid: TimeGrid,
        measure: Measure,
    ) -> Result<Self> {
        if measure == Measure::QTilde {
            return Err(Error::invalid(
                "optimal wealth is simulated under P or Q only",
            ));
        }
        Ok(WealthEngine {
            model,
            dual,
            tables: DeterministicTables::new(model, grid),
            measure,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.tables.grid
    }

    pub fn y0(&self) -> f64 {
        self.model.market.x0 + self.tables.human_capital[0]
    }

    /// Walks one path from `y0`, calling `f` at every node in time order.
    pub fn walk<F: FnMut(&Node)>(&self, seed: u64, path_id: u64, y0: f64, mut f: F) -> Result<()> {
        let p = &self.model.market;
        let pref = &self.model.prefs;
        let grid = self.tables.grid;
        let n = grid.n_steps;
        let dt = grid.dt();
        let delta = pref.delta;
        let e = 1.0 - delta;
        let rho = p.corr_w1w2;
        let policy: &dyn PsiPolicy = self.dual;
        let mode = match self.measure {
            Measure::P => DriftMode::P,
            _ => DriftMode::Q(policy),
        };
        let mut rng = PathRng::new(seed, path_id);
        let mut z = p.z0;
        let mut s = p.s0;
        let mut y = y0;
        for i in 0..=n {
            let t = grid.t(i);
            let annuity = self.dual.annuity(t, z);
            if !(annuity > 0.0) {
                return Err(Error::NonPositiveAnnuity { t, value: annuity });
            }
            let discount = exp(-self.tables.cum_r_mu[i]);
            if i == n {
                f(&Node {
                    i,
                    t,
                    z,
                    s,
                    y,
                    annuity,
                    psi: self.dual.psi(t, z),
                    discount,
                    payout: 0.0,
                    payout_rate: 0.0,
                    jumps: 0,
                });
                break;
            }
            let st = draw_step(p, t, dt, z, &mode, &mut rng, i)?;
            let psi = self.dual.psi(t, z);
            let (nu, theta) = risk_prices(p, t, z, psi)?;
            let t1 = grid.t(i + 1);
            // consumption intensity, frozen in z over the step so it is known at t_i
            let a1 = self.dual.annuity(t1, z);
            let rate =
                0.5 * ((1.0 + self.tables.mu[i]) / annuity + (1.0 + self.tables.mu[i + 1]) / a1);
            let payout = discount * y * -expm1(-rate * dt);
            f(&Node {
                i,
                t,
                z,
                s,
                y,
                annuity,
                psi,
                discount,
                payout,
                payout_rate: rate,
                jumps: st.jumps,
            });
            let l1 = -nu / e;
            let l2 = -theta / e;
            let jr = jump_ratio(psi, delta);
            let lambda = self.tables.lambda[i];
            let dq1 = st.dw1 - nu * dt;
            let dq2 = st.dw2 - theta * dt;
            let qv = l1 * l1 + l2 * l2 + 2.0 * rho * l1 * l2;
            let mut x = self.tables.step_r_mu(i) - rate * dt - (jr * psi * lambda + 0.5 * qv) * dt
                + l1 * dq1
                + l2 * dq2;
            if st.jumps > 0 {
                x += st.jumps as f64 * ln1p(jr);
            }
            y *= exp(x);
            if !(y > 0.0) || !y.is_finite() {
                return Err(Error::NonPositiveWealth { value: y });
            }
            s *= exp(asset_log_step(p, t, z, dt, st.dw1, st.dw2, st.jumps));
            z = st.z_next;
        }
        Ok(())
    }

    /// Full record of one path from the model's own `y0`.
    pub fn path(&self, seed: u64, path_id: u64) -> Result<StrategyPath> {
        let y0 = self.y0();
        let p = &self.model.market;
        let pref = &self.model.prefs;
        let mut out = StrategyPath {
            path_id,
            measure: self.measure,
            t: Vec::new(),
            z: Vec::new(),
            s: Vec::new(),
            y: Vec::new(),
            x: Vec::new(),
            c: Vec::new(),
            p: Vec::new(),
            pi: Vec::new(),
        };
        let mut err = None;
        self.walk(seed, path_id, y0, |nd| {
            let (c, pp) = match optimal_consumption_insurance(nd.annuity, nd.y, nd.t) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    (f64::NAN, f64::NAN)
                }
            };
            let pi = optimal_allocation(p, pref, nd.psi, nd.t, nd.z, nd.y).unwrap_or_else(|e| {
                err.get_or_insert(e);
                f64::NAN
            });
            out.t.push(nd.t);
            out.z.push(nd.z);
            out.s.push(nd.s);
            out.y.push(nd.y);
            out.x.push(nd.y - self.tables.human_capital[nd.i]);
            out.c.push(c);
            out.p.push(pp);
            out.pi.push(pi);
        })?;
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// Per-path functionals behind the budget, martingale and duality checks.
    fn summarize(&self, seed: u64, path_id: u64, y0: f64) -> Result<PathSummary> {
        let pref = &self.model.prefs;
        let delta = pref.delta;
        let kappa = pref.kappa;
        let tab = &self.tables;
        let n = tab.grid.n_steps;
        let dt = tab.grid.dt();
        let mut payouts = 0.0;
        let mut terminal = 0.0;
        let mut utility = 0.0;
        let mut prev_u = 0.0;
        let mut min_c = f64::INFINITY;
        let mut c_equals_p = true;
        let mut first_c = 0.0;
        let mut first_pi = 0.0;
        let p = &self.model.market;
        let mut err = None;
        self.walk(seed, path_id, y0, |nd| {
            let (c, pp) = optimal_consumption_insurance(nd.annuity, nd.y, nd.t)
                .unwrap_or((f64::NAN, f64::NAN));
            c_equals_p &= c.to_bits() == pp.to_bits();
            min_c = min_c.min(c);
            if nd.i == 0 {
                first_c = c;
                first_pi =
                    optimal_allocation(p, pref, nd.psi, nd.t, nd.z, nd.y).unwrap_or_else(|e| {
                        err.get_or_insert(e);
                        f64::NAN
                    });
            }
            payouts += nd.payout;
            // utility discount e^{-int (rho + mu) - kappa t}
            let w = exp(-tab.cum_rho_mu[nd.i] - kappa * nd.t);
            let u = w * (1.0 + tab.mu[nd.i]) * powf(c, delta) / delta;
            if nd.i > 0 {
                utility += 0.5 * (prev_u + u) * dt;
            }
            prev_u = u;
            if nd.i == n {
                terminal = nd.discount * nd.y;
                utility += w * powf(nd.y, delta) / delta;
            }
        })?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok(PathSummary {
            discounted_terminal: terminal,
            payouts,
            utility,
            min_c,
            c_equals_p,
            c0: first_c,
            pi0: first_pi,
        })
    }

    /// Monte Carlo over `n_paths` paths started from the model's `y0`.
    pub fn run(&self, n_paths: usize, seed: u64) -> Result<WealthReport> {
        self.run_from(n_paths, seed, self.y0())
    }

    pub fn run_from(&self, n_paths: usize, seed: u64, y0: f64) -> Result<WealthReport> {
        let res = map_indices(n_paths, |k| self.summarize(seed, k as u64, y0));
        let mut sums = Vec::with_capacity(n_paths);
        for r in res {
            sums.push(r?);
        }
        let income_pv = self.tables.cum_disc_income[self.tables.grid.n_steps] * (y0 / self.y0());
        let budget: Vec<f64> = sums
            .iter()
            .map(|s| s.payouts + s.discounted_terminal)
            .collect();
        let utility: Vec<f64> = sums.iter().map(|s| s.utility).collect();
        Ok(WealthReport {
            measure: self.measure,
            y0,
            income_pv,
            budget: McEstimate::from_samples(&budget),
            primal: McEstimate::from_samples(&utility),
            min_consumption: sums.iter().map(|s| s.min_c).fold(f64::INFINITY, f64::min),
            c_equals_p: sums.iter().all(|s| s.c_equals_p),
            c0: sums.first().map(|s| s.c0).unwrap_or(f64::NAN),
            pi0: sums.first().map(|s| s.pi0).unwrap_or(f64::NAN),
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct PathSummary {
    discounted_terminal: f64,
    payouts: f64,
    utility: f64,
    min_c: f64,
    c_equals_p: bool,
    c0: f64,
    pi0: f64,
}

/// Aggregate of a wealth simulation.
#[derive(Debug, Clone, Copy)]
pub struct WealthReport {
    pub measure: Measure,
    pub y0: f64,
    /// `int_0^T e^{-int (r + mu)} ell`, equal to `g(0)` up to quadrature.
    pub income_pv: f64,
    /// `int e^{-int(r+mu)} (c + mu p) + e^{-int_0^T (r+mu)} X(T)`; its mean is `x0 + g(0)` under `Q`.
    pub budget: McEstimate,
    /// Expected discounted utility of consumption, insurance and terminal wealth.
    pub primal: McEstimate,
    pub min_consumption: f64,
    pub c_equals_p: bool,
    pub c0: f64,
    pub pi0: f64,
}

impl WealthReport {
    /// Mean of the discounted wealth plus discounted net contributions, whose
    /// target is `x0`.
    pub fn martingale_mean(&self) -> f64 {
        self.budget.mean - self.income_pv
    }
}

/// Strategy and wealth along one path.
#[derive(Debug, Clone)]
pub struct StrategyPath {
    pub path_id: u64,
    pub measure: Measure,
    pub t: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub c: Vec<f64>,
    pub p: Vec<f64>,
    pub pi: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consumption_is_wealth_over_annuity() {
        assert_eq!(
            optimal_consumption_insurance(2.0, 10.0, 0.0).unwrap(),
            (5.0, 5.0)
        );
        assert_eq!(
            optimal_consumption_insurance(1.0, 3.0, 10.0).unwrap(),
            (3.0, 3.0)
        );
        assert!(optimal_consumption_insurance(0.0, 3.0, 1.0).is_err());
    }

    #[test]
    fn allocation_without_premium_is_zero() {
        let p = MarketParams::constant(0.03, 0.03, 0.2, 0.1, 0.0, 1.0);
        let pref = PreferenceSpec::new(0.02, 0.0, 0.5).unwrap();
        assert_eq!(
            optimal_allocation(&p, &pref, 1.0, 0.0, 0.0, 10.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn allocation_hand_calculation() {
        let p = MarketParams::constant(0.03, 0.07, 0.2, 0.1, 0.0, 0.0);
        let pref = PreferenceSpec::new(0.02, 0.0, 0.5).unwrap();
        // nu = 0.2/0.05 (-0.04) = -0.16, theta = -0.08
        let pi = optimal_allocation(&p, &pref, 1.0, 0.0, 0.0, 1.0).unwrap();
        assert!((pi - (0.16 + 0.08) * 2.0 / 0.3).abs() < 1e-14);
        let hot = PreferenceSpec::new(0.02, 0.0, 0.9).unwrap();
        assert!(optimal_allocation(&p, &hot, 1.0, 0.0, 0.0, 1.0)
            .unwrap()
            .is_finite());
        let flat = MarketParams::constant(0.03, 0.07, 0.2, -0.2, 0.0, 0.0);
        assert!(matches!(
            optimal_allocation(&flat, &pref, 1.0, 0.0, 0.0, 1.0),
            Err(Error::SingularAllocation { .. })
        ));
    }

    #[test]
    fn loading_equations_agree_without_jumps() {
        let p = MarketParams::constant(0.03, 0.07, 0.2, 0.1, 0.0, 1.0);
        let pref = PreferenceSpec::new(0.02, 0.0, 0.5).unwrap();
        let (nu, _) = risk_prices(&p, 0.0, 0.0, 1.0).unwrap();
        let pi = -nu * 3.0 / (0.5 * 0.2);
        let r = allocation_residuals(&p, &pref, 1.0, 0.0, 0.0, 3.0, pi).unwrap();
        assert!(r[0].abs() < 1e-14 && r[1].abs() < 1e-14);
        assert_eq!(r[2], 0.0);
    }
}
