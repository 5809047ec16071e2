//! Dual problem for power utility.
//!
//! The dual value is `Psi(zeta, psi) = (1-d)/d zeta^{-d/(1-d)} H(psi) + zeta (x0 + g0)`
//! with the annuity `H(t, z) = e^{-h(t, z)}`. `h` solves, in time-to-go `tau = T - t`,
//!
//! ```text
//! h_tau = 1/2 h_zz + b(z) h_z - c - 1/2 h_z^2 - (1 + mu) e^h - opt_psi K(psi; h_z),  h(T, .) = 0
//! ```
//!
//! where `opt` is a minimum for `d > 0` and a maximum for `d < 0`. Equivalently
//! `V = e^{-h}` is the Feynman-Kac expectation of `int e^{-int a}(1 + mu) + e^{-int a}`
//! under the measure `Q~`, with rate `a = r~ + mu + kappa/(1-d)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::market::{MarketParams, Model, PreferenceSpec, PsiPolicy};
use crate::math::{exp, ln, locate_uniform, powf, solve_tridiagonal, sqrt, McEstimate};
use crate::measure::risk_prices;
use crate::par::map_indices;
use crate::rng::PathRng;
use crate::{Error, Result};

/// Power utility `U(t, x) = e^{-kappa t} x^d / d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilitySpec {
    pub kappa: f64,
    pub delta: f64,
}

impl UtilitySpec {
    pub fn from_prefs(pref: &PreferenceSpec) -> Self {
        UtilitySpec {
            kappa: pref.kappa,
            delta: pref.delta,
        }
    }

    pub fn utility(&self, t: f64, x: f64) -> f64 {
        exp(-self.kappa * t) * powf(x, self.delta) / self.delta
    }

    /// Inverse of marginal utility, `e^{-kappa t/(1-d)} y^{-1/(1-d)}`.
    pub fn marginal_inverse(&self, t: f64, y: f64) -> f64 {
        let d = self.delta;
        exp(-self.kappa * t / (1.0 - d)) * powf(y, -1.0 / (1.0 - d))
    }

    /// Convex conjugate `sup_x U(t, x) - x y`.
    pub fn dual(&self, t: f64, y: f64) -> f64 {
        let d = self.delta;
        (1.0 - d) / d * exp(-self.kappa * t / (1.0 - d)) * powf(y, -d / (1.0 - d))
    }
}

/// Search interval for the jump-measure optimiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for PsiBounds {
    fn default() -> Self {
        PsiBounds {
            min: 1e-4,
            max: 50.0,
        }
    }
}

impl PsiBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && min < max && max.is_finite()) {
            return Err(Error::invalid(alloc::format!(
                "psi bounds must satisfy 0 < min < max < inf, got [{min}, {max}]"
            )));
        }
        Ok(PsiBounds { min, max })
    }
}

/// `K(psi) = (psi^q + d psi/(1-d)) lambda - B psi h_z + C (g2 psi^2 - g1 psi)`, `q = -d/(1-d)`.
#[derive(Debug, Clone, Copy)]
pub struct JumpPenalty {
    lambda: f64,
    q: f64,
    lin: f64,
    quad: f64,
}

impl JumpPenalty {
    pub fn at(p: &MarketParams, pref: &PreferenceSpec, t: f64, z: f64, h_z: f64) -> Result<Self> {
        let c = p.coefficients(t, z);
        let v = c.vol2();
        if !(v > 0.0) {
            return Err(Error::SingularMarket { t, z });
        }
        let d = pref.delta;
        let e = 1.0 - d;
        let gl = c.gamma * c.lambda;
        let cq = d / (2.0 * e * e * v);
        Ok(JumpPenalty {
            lambda: c.lambda,
            q: -d / e,
            lin: d / e * c.lambda
                - d * c.beta * gl * h_z / (e * v)
                - cq * 2.0 * (c.r - c.alpha) * gl,
            quad: cq * gl * gl,
        })
    }

    #[inline]
    pub fn value(&self, psi: f64) -> f64 {
        powf(psi, self.q) * self.lambda + self.lin * psi + self.quad * psi * psi
    }

    #[inline]
    pub fn derivative(&self, psi: f64) -> f64 {
        self.q * powf(psi, self.q - 1.0) * self.lambda + self.lin + 2.0 * self.quad * psi
    }

    #[inline]
    pub fn second_derivative(&self, psi: f64) -> f64 {
        self.q * (self.q - 1.0) * powf(psi, self.q - 2.0) * self.lambda + 2.0 * self.quad
    }
}

/// Value of `K` at one point.
pub fn jump_penalty_k(
    p: &MarketParams,
    pref: &PreferenceSpec,
    t: f64,
    z: f64,
    h_z: f64,
    psi: f64,
) -> Result<f64> {
    if !(psi > 0.0) {
        return Err(Error::NonPositivePsi { node: 0, psi });
    }
    Ok(JumpPenalty::at(p, pref, t, z, h_z)?.value(psi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiOptimum {
    pub psi: f64,
    pub value: f64,
    pub at_bound: bool,
    /// `K''` at the optimum, with the sign flipped for `d < 0`; positive when
    /// the optimum is a proper extremum.
    pub curvature: f64,
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;
const SCAN_POINTS: usize = 48;

/// Minimises (`d > 0`) or maximises (`d < 0`) `K` over `bounds`.
/// With no jumps `psi` is not identified and `1` is returned.
pub fn minimize_psi(
    p: &MarketParams,
    pref: &PreferenceSpec,
    t: f64,
    z: f64,
    h_z: f64,
    bounds: PsiBounds,
) -> Result<PsiOptimum> {
    let k = JumpPenalty::at(p, pref, t, z, h_z)?;
    optimize_penalty(&k, pref.delta, bounds)
}

pub(crate) fn optimize_penalty(
    k: &JumpPenalty,
    delta: f64,
    bounds: PsiBounds,
) -> Result<PsiOptimum> {
    if k.lambda == 0.0 {
        return Ok(PsiOptimum {
            psi: 1.0,
            value: 0.0,
            at_bound: false,
            curvature: 0.0,
        });
    }
    let sign = if delta > 0.0 { 1.0 } else { -1.0 };
    let f = |psi: f64| sign * k.value(psi);
    // coarse scan on a log grid brackets the optimum
    let (la, lb) = (ln(bounds.min), ln(bounds.max));
    let node = |i: usize| {
        if i == 0 {
            bounds.min
        } else if i == SCAN_POINTS {
            bounds.max
        } else {
            exp(la + (lb - la) * i as f64 / SCAN_POINTS as f64)
        }
    };
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for i in 0..=SCAN_POINTS {
        let v = f(node(i));
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "jump penalty",
                node: i,
            });
        }
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    let mut a = node(best.saturating_sub(1));
    let mut b = node((best + 1).min(SCAN_POINTS));
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > 1e-10 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2);
        }
    }
    let mut psi = 0.5 * (a + b);
    let curv = sign * k.second_derivative(psi);
    if curv > 0.0 {
        let step = k.derivative(psi) / k.second_derivative(psi);
        let cand = psi - step;
        if cand >= bounds.min && cand <= bounds.max && f(cand) <= f(psi) {
            psi = cand;
        }
    }
    let width = bounds.max - bounds.min;
    let at_bound = psi - bounds.min <= 1e-9 * width || bounds.max - psi <= 1e-9 * width;
    Ok(PsiOptimum {
        psi,
        value: k.value(psi),
        at_bound,
        curvature: sign * k.second_derivative(psi),
    })
}

/// `r~(psi)`: the rate at which the dual annuity discounts, before mortality
/// and the utility discount.
pub fn effective_rate(
    p: &MarketParams,
    pref: &PreferenceSpec,
    t: f64,
    z: f64,
    psi: f64,
) -> Result<f64> {
    let (nu, theta) = risk_prices(p, t, z, psi)?;
    let d = pref.delta;
    let e = 1.0 - d;
    let r = p.r.eval(t);
    let lambda = p.lambda.eval(t);
    Ok(pref.rho.eval(t) / e
        - d * r / e
        - d * (nu * nu + theta * theta) / (2.0 * e * e)
        - (powf(psi, -d / e) - 1.0 + d * (psi - 1.0) / e) * lambda)
}

/// Full discount rate of the annuity, `r~ + mu + kappa/(1-d)`.
pub fn annuity_rate(model: &Model, t: f64, z: f64, psi: f64) -> Result<f64> {
    let pref = &model.prefs;
    Ok(effective_rate(&model.market, pref, t, z, psi)?
        + model.mortality.mu.eval(t)
        + pref.kappa / (1.0 - pref.delta))
}

/// Finite-difference grid for the dual PDE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeGrid {
    pub n_t: usize,
    pub n_z: usize,
    pub z_min: f64,
    pub z_max: f64,
}

impl PdeGrid {
    /// `n_t` time steps and `n_z` nodes on `z0 +- 6 sqrt(T)`.
    pub fn around(model: &Model, n_t: usize, n_z: usize) -> Self {
        let w = 6.0 * sqrt(model.horizon());
        PdeGrid {
            n_t,
            n_z,
            z_min: model.market.z0 - w,
            z_max: model.market.z0 + w,
        }
    }

    pub fn doubled(&self) -> Self {
        PdeGrid {
            n_t: 2 * self.n_t,
            n_z: 2 * self.n_z - 1,
            ..*self
        }
    }

    pub fn halved(&self) -> Self {
        PdeGrid {
            n_t: (self.n_t / 2).max(1),
            n_z: (self.n_z / 2 + 1).max(3),
            ..*self
        }
    }
}

/// Solution of the dual PDE on a `(t, z)` grid. Tables are row-major in
/// ascending `t`: entry `i * n_z + j` is at `(t_i, z_j)`.
#[derive(Debug, Clone)]
pub struct DualGrid {
    pub ts: Vec<f64>,
    pub zs: Vec<f64>,
    pub h: Vec<f64>,
    pub psi_hat: Vec<f64>,
    pub bounds: PsiBounds,
    /// Nodes where the optimiser stopped on a bound.
    pub boundary_hits: usize,
    /// Nodes where the drift was upwinded because the cell Peclet number exceeded one.
    pub upwind_nodes: usize,
    z_free: bool,
    h_t: Vec<f64>,
    psi_t: Vec<f64>,
}

impl DualGrid {
    /// Rebuilds a grid from its tables, e.g. after reading it back from disk.
    pub fn from_tables(
        ts: Vec<f64>,
        zs: Vec<f64>,
        h: Vec<f64>,
        psi_hat: Vec<f64>,
        bounds: PsiBounds,
        z_free: bool,
    ) -> Result<Self> {
        let (nt, nz) = (ts.len(), zs.len());
        if nt < 2 || nz < 2 || h.len() != nt * nz || psi_hat.len() != nt * nz {
            return Err(Error::invalid(
                "dual grid tables do not form a full (t, z) grid",
            ));
        }
        if ts[0] != 0.0
            || !ts.windows(2).all(|w| w[0] < w[1])
            || !zs.windows(2).all(|w| w[0] < w[1])
        {
            return Err(Error::invalid(
                "dual grid nodes must be increasing and start at t = 0",
            ));
        }
        let mid = nz / 2;
        let h_t = (0..nt).map(|i| h[i * nz + mid]).collect();
        let psi_t = (0..nt).map(|i| psi_hat[i * nz + mid]).collect();
        Ok(DualGrid {
            ts,
            zs,
            h,
            psi_hat,
            bounds,
            boundary_hits: 0,
            upwind_nodes: 0,
            z_free,
            h_t,
            psi_t,
        })
    }

    pub fn n_t(&self) -> usize {
        self.ts.len()
    }

    pub fn n_z(&self) -> usize {
        self.zs.len()
    }

    #[inline]
    fn cell(&self, t: f64, z: f64) -> (usize, f64, usize, f64) {
        let nt = self.ts.len();
        let nz = self.zs.len();
        let dt = self.ts[nt - 1] / (nt - 1) as f64;
        let (i, wt) = locate_uniform(0.0, dt, nt, t);
        let (j, wz) = locate_uniform(self.zs[0], self.zs[1] - self.zs[0], nz, z);
        (i, wt, j, wz)
    }

    #[inline]
    fn bilinear(&self, table: &[f64], t: f64, z: f64) -> f64 {
        let nz = self.zs.len();
        let (i, wt, j, wz) = self.cell(t, z);
        let v00 = table[i * nz + j];
        let v01 = table[i * nz + j + 1];
        let v10 = table[(i + 1) * nz + j];
        let v11 = table[(i + 1) * nz + j + 1];
        let a = v00 + wz * (v01 - v00);
        let b = v10 + wz * (v11 - v10);
        a + wt * (b - a)
    }

    /// `h(t, z)`, bilinear in the grid and flat outside the `z` range.
    pub fn h_at(&self, t: f64, z: f64) -> f64 {
        if self.z_free {
            return self.h_of_t(t);
        }
        self.bilinear(&self.h, t, z)
    }

    #[inline]
    fn along_t(&self, col: &[f64], t: f64) -> f64 {
        let nt = self.ts.len();
        let (i, w) = locate_uniform(0.0, self.ts[nt - 1] / (nt - 1) as f64, nt, t);
        col[i] + w * (col[i + 1] - col[i])
    }

    fn h_of_t(&self, t: f64) -> f64 {
        self.along_t(&self.h_t, t)
    }

    /// Annuity factor `H(t, z) = e^{-h(t, z)}`; equal to one at the horizon.
    pub fn annuity(&self, t: f64, z: f64) -> f64 {
        exp(-self.h_at(t, z))
    }

    pub fn psi_at(&self, t: f64, z: f64) -> f64 {
        self.psi(t, z)
    }

    /// Annuity factor tabulated on the time nodes of `grid` along `z`.
    /// Dense enough sampling of `H` for the simulation loops.
    pub fn annuity_table(&self, times: &[f64], z: f64) -> Vec<f64> {
        times.iter().map(|&t| self.annuity(t, z)).collect()
    }

    /// True when no coefficient depends on `z`, in which case every
    /// quantity is a function of `t` alone.
    pub fn is_z_free(&self) -> bool {
        self.z_free
    }
}

impl PsiPolicy for DualGrid {
    fn psi(&self, t: f64, z: f64) -> f64 {
        if self.z_free {
            return self.along_t(&self.psi_t, t);
        }
        self.bilinear(&self.psi_hat, t, z)
    }
}

struct Level {
    f: Vec<f64>,
    psi: Vec<f64>,
    hits: usize,
}

/// Explicit part `-1/2 h_z^2 - (1 + mu) e^h - opt K` and the optimal `psi` at every node.
fn explicit_part(model: &Model, t: f64, zs: &[f64], h: &[f64], bounds: PsiBounds) -> Result<Level> {
    let nz = zs.len();
    let dz = zs[1] - zs[0];
    let mu = model.mortality.mu.eval(t);
    let res = map_indices(nz, |j| -> Result<(f64, f64, bool)> {
        let hz = if j == 0 || j == nz - 1 {
            0.0
        } else {
            (h[j + 1] - h[j - 1]) / (2.0 * dz)
        };
        let opt = minimize_psi(&model.market, &model.prefs, t, zs[j], hz, bounds)?;
        let f = -0.5 * hz * hz - (1.0 + mu) * exp(h[j]) - opt.value;
        Ok((f, opt.psi, opt.at_bound))
    });
    let mut level = Level {
        f: Vec::with_capacity(nz),
        psi: Vec::with_capacity(nz),
        hits: 0,
    };
    for r in res {
        let (f, psi, hit) = r?;
        level.f.push(f);
        level.psi.push(psi);
        level.hits += hit as usize;
    }
    Ok(level)
}

/// Linear part `1/2 h_zz + b h_z - c` at time `t`: tridiagonal coefficients and source.
struct Linear {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    source: Vec<f64>,
    upwind: usize,
}

fn linear_part(model: &Model, t: f64, zs: &[f64]) -> Result<Linear> {
    let p = &model.market;
    let pref = &model.prefs;
    let nz = zs.len();
    let dz = zs[1] - zs[0];
    let d = pref.delta;
    let e = 1.0 - d;
    let mu = model.mortality.mu.eval(t);
    let base = pref.rho.eval(t) / e - d * p.r.eval(t) / e + mu + pref.kappa / e;
    let mut lin = Linear {
        lower: vec![0.0; nz],
        diag: vec![0.0; nz],
        upper: vec![0.0; nz],
        source: vec![0.0; nz],
        upwind: 0,
    };
    let diff = 0.5 / (dz * dz);
    for j in 0..nz {
        let z = zs[j];
        let c = p.coefficients(t, z);
        let v = c.vol2();
        if !(v > 0.0) {
            return Err(Error::SingularMarket { t, z });
        }
        let ra = c.r - c.alpha;
        let drift = p.eta.eval(t, z) - d * c.beta * ra / (e * v);
        let c0 = -base - c.lambda - d * c.lambda / e + d * ra * ra / (2.0 * e * e * v);
        lin.source[j] = -c0;
        if j == 0 || j == nz - 1 {
            // Neumann edge through a mirrored ghost node: drift term vanishes
            let k = 2.0 * diff;
            lin.diag[j] = -k;
            if j == 0 {
                lin.upper[j] = k;
            } else {
                lin.lower[j] = k;
            }
            continue;
        }
        if drift.abs() * dz > 1.0 {
            lin.upwind += 1;
            if drift > 0.0 {
                lin.lower[j] = diff;
                lin.diag[j] = -2.0 * diff - drift / dz;
                lin.upper[j] = diff + drift / dz;
            } else {
                lin.lower[j] = diff - drift / dz;
                lin.diag[j] = -2.0 * diff + drift / dz;
                lin.upper[j] = diff;
            }
        } else {
            let adv = drift / (2.0 * dz);
            lin.lower[j] = diff - adv;
            lin.diag[j] = -2.0 * diff;
            lin.upper[j] = diff + adv;
        }
    }
    Ok(lin)
}

/// Backward IMEX sweep for `h`: second-order backward differences in time
/// (one implicit-explicit Euler start step), linear diffusion and drift
/// implicit, nonlinear terms extrapolated from the two previous levels.
pub fn solve_pde(model: &Model, grid: PdeGrid, bounds: PsiBounds) -> Result<DualGrid> {
    if grid.n_t == 0 || grid.n_z < 3 || !(grid.z_max > grid.z_min) {
        return Err(Error::invalid(
            "PDE grid needs n_t >= 1, n_z >= 3 and a nonempty z range",
        ));
    }
    let horizon = model.horizon();
    let nt = grid.n_t;
    let nz = grid.n_z;
    let dtau = horizon / nt as f64;
    let zs: Vec<f64> = (0..nz)
        .map(|j| grid.z_min + (grid.z_max - grid.z_min) * j as f64 / (nz - 1) as f64)
        .collect();
    let t_of = |level: usize| {
        // level counts steps back from the horizon
        if level == nt {
            0.0
        } else {
            horizon - level as f64 * dtau
        }
    };

    let mut levels_h: Vec<Vec<f64>> = Vec::with_capacity(nt + 1);
    let mut levels_psi: Vec<Vec<f64>> = Vec::with_capacity(nt + 1);
    let mut hits = 0;
    let mut upwind = 0;

    let mut h_prev: Vec<f64> = vec![0.0; nz];
    let mut lv_prev = explicit_part(model, horizon, &zs, &h_prev, bounds)?;
    hits += lv_prev.hits;
    levels_h.push(h_prev.clone());
    levels_psi.push(lv_prev.psi.clone());
    let mut h_prev2: Vec<f64> = Vec::new();
    let mut f_prev2: Vec<f64> = Vec::new();

    for level in 1..=nt {
        let t = t_of(level);
        let lin = linear_part(model, t, &zs)?;
        upwind += lin.upwind;
        let first = level == 1;
        let (w, lower, diag, upper, mut rhs): (f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);
        if first {
            // (h1 - h0)/dtau = L h1 + s + F0
            w = dtau;
            rhs = (0..nz)
                .map(|j| h_prev[j] + dtau * (lin.source[j] + lv_prev.f[j]))
                .collect();
        } else {
            // (3 h2 - 4 h1 + h0)/(2 dtau) = L h2 + s + 2 F1 - F0
            w = 2.0 * dtau / 3.0;
            rhs = (0..nz)
                .map(|j| {
                    (4.0 * h_prev[j] - h_prev2[j]) / 3.0
                        + w * (lin.source[j] + 2.0 * lv_prev.f[j] - f_prev2[j])
                })
                .collect();
        }
        lower = lin.lower.iter().map(|a| -w * a).collect();
        diag = lin.diag.iter().map(|a| 1.0 - w * a).collect();
        upper = lin.upper.iter().map(|a| -w * a).collect();
        if !solve_tridiagonal(&lower, &diag, &upper, &mut rhs) {
            return Err(Error::PdeDivergence {
                level,
                norm: f64::NAN,
            });
        }
        let norm = rhs.iter().fold(0.0f64, |m, v| {
            if v.is_finite() {
                m.max(v.abs())
            } else {
                f64::INFINITY
            }
        });
        if !(norm <= 1e6) {
            return Err(Error::PdeDivergence { level, norm });
        }
        let lv = explicit_part(model, t, &zs, &rhs, bounds)?;
        hits += lv.hits;
        levels_h.push(rhs.clone());
        levels_psi.push(lv.psi.clone());
        h_prev2 = core::mem::replace(&mut h_prev, rhs);
        f_prev2 = core::mem::replace(&mut lv_prev, lv).f;
    }

    // reorder into ascending time
    let ts: Vec<f64> = (0..=nt).map(|i| t_of(nt - i)).collect();
    let mut h = Vec::with_capacity((nt + 1) * nz);
    let mut psi_hat = Vec::with_capacity((nt + 1) * nz);
    for i in 0..=nt {
        h.extend_from_slice(&levels_h[nt - i]);
        psi_hat.extend_from_slice(&levels_psi[nt - i]);
    }
    let mid = nz / 2;
    let h_t = (0..=nt).map(|i| h[i * nz + mid]).collect();
    let psi_t = (0..=nt).map(|i| psi_hat[i * nz + mid]).collect();
    Ok(DualGrid {
        ts,
        zs,
        h,
        psi_hat,
        bounds,
        boundary_hits: hits,
        upwind_nodes: upwind,
        z_free: model.market.is_z_free(),
        h_t,
        psi_t,
    })
}

/// Feynman-Kac estimate of the annuity under `Q~` for a given `psi` policy,
/// on `n_steps` and, with the same Brownian paths, on `n_steps / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualMc {
    pub fine: McEstimate,
    pub coarse: McEstimate,
    /// Paired difference `fine - coarse`, an estimate of the time-discretisation bias.
    pub refinement: McEstimate,
}

pub fn mc_dual_value(
    model: &Model,
    policy: &dyn PsiPolicy,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<DualMc> {
    if n_steps < 2 || n_steps % 2 != 0 {
        return Err(Error::invalid(
            "dual Monte Carlo needs an even number of steps",
        ));
    }
    let horizon = model.horizon();
    let d = model.prefs.delta;
    let q = -d / (1.0 - d);
    let p = &model.market;
    let rate_and_drift = |t: f64, z: f64| -> Result<(f64, f64)> {
        let psi = policy.psi(t, z);
        let (nu, _) = risk_prices(p, t, z, psi)?;
        let a = annuity_rate(model, t, z, psi)?;
        Ok((a, p.eta.eval(t, z) + q * nu))
    };
    let path = |k: usize| -> Result<(f64, f64)> {
        let mut rng = PathRng::new(seed, k as u64);
        let walk = |n: usize, draws: &[f64]| -> Result<f64> {
            let dt = horizon / n as f64;
            let per = draws.len() / n;
            let sq = sqrt(dt / per as f64);
            let mut z = p.z0;
            let mut t = 0.0;
            let (mut a0, mut drift) = rate_and_drift(t, z)?;
            let mut big_a = 0.0;
            let mut disc0 = 1.0;
            let mut m0 = 1.0 + model.mortality.mu.eval(0.0);
            let mut integral = 0.0;
            for i in 0..n {
                let dw: f64 = draws[i * per..(i + 1) * per].iter().sum::<f64>() * sq;
                z += drift * dt + dw;
                t = if i + 1 == n {
                    horizon
                } else {
                    (i + 1) as f64 * dt
                };
                let (a1, d1) = rate_and_drift(t, z)?;
                big_a += 0.5 * (a0 + a1) * dt;
                let disc1 = exp(-big_a);
                let m1 = 1.0 + model.mortality.mu.eval(t);
                integral += 0.5 * (disc0 * m0 + disc1 * m1) * dt;
                a0 = a1;
                drift = d1;
                disc0 = disc1;
                m0 = m1;
            }
            Ok(integral + disc0)
        };
        let draws: Vec<f64> = (0..n_steps).map(|_| rng.normal()).collect();
        let fine = walk(n_steps, &draws)?;
        let coarse = walk(n_steps / 2, &draws)?;
        Ok((fine, coarse))
    };
    let res = map_indices(n_paths, path);
    let mut fine = Vec::with_capacity(n_paths);
    let mut coarse = Vec::with_capacity(n_paths);
    for r in res {
        let (f, c) = r?;
        fine.push(f);
        coarse.push(c);
    }
    let diff: Vec<f64> = fine.iter().zip(&coarse).map(|(f, c)| f - c).collect();
    Ok(DualMc {
        fine: McEstimate::from_samples(&fine),
        coarse: McEstimate::from_samples(&coarse),
        refinement: McEstimate::from_samples(&diff),
    })
}

/// Lagrange multiplier `((x0 + g0)/H)^{d-1}` and the dual value `(x0 + g0)^d H^{1-d} / d`.
pub fn optimal_zeta(x0: f64, g0: f64, annuity: f64, delta: f64) -> Result<(f64, f64)> {
    let y0 = x0 + g0;
    if !(y0 > 0.0) {
        return Err(Error::NonPositiveWealth { value: y0 });
    }
    if !(annuity > 0.0) {
        return Err(Error::NonPositiveAnnuity {
            t: 0.0,
            value: annuity,
        });
    }
    let zeta = powf(y0 / annuity, delta - 1.0);
    let value = powf(y0, delta) * powf(annuity, 1.0 - delta) / delta;
    Ok((zeta, value))
}

/// `Psi(zeta) = (1-d)/d zeta^{-d/(1-d)} H + zeta (x0 + g0)`.
pub fn dual_functional(zeta: f64, annuity: f64, x0: f64, g0: f64, delta: f64) -> f64 {
    (1.0 - delta) / delta * powf(zeta, -delta / (1.0 - delta)) * annuity + zeta * (x0 + g0)
}

/// Dual grid together with the multiplier and the tabulated annuity.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub grid: DualGrid,
    pub zeta_hat: f64,
    pub dual_value: f64,
    pub g0: f64,
    pub y0: f64,
    /// `H(t, z0)` on the PDE time nodes.
    pub annuity_t: Vec<f64>,
}

impl DualSolution {
    pub fn new(model: &Model, grid: DualGrid) -> Result<Self> {
        let g0 = crate::market::human_capital(&model.market, &model.mortality, &model.income, 0.0);
        let x0 = model.market.x0;
        let z0 = model.market.z0;
        let annuity_t = grid.annuity_table(&grid.ts, z0);
        let (zeta_hat, dual_value) = optimal_zeta(x0, g0, annuity_t[0], model.prefs.delta)?;
        Ok(DualSolution {
            grid,
            zeta_hat,
            dual_value,
            g0,
            y0: x0 + g0,
            annuity_t,
        })
    }

    pub fn solve(model: &Model, grid: PdeGrid, bounds: PsiBounds) -> Result<Self> {
        DualSolution::new(model, solve_pde(model, grid, bounds)?)
    }

    pub fn annuity0(&self) -> f64 {
        self.annuity_t[0]
    }
}

/// Conditional annuity `H(t, z)` from a solved grid.
pub fn annuity_factor(dual: &DualGrid, t: f64, z: f64) -> f64 {
    dual.annuity(t, z)
}

/// PDE value, Monte Carlo value and declared discretisation budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossCheck {
    pub v_pde: f64,
    pub v_pde_coarse: f64,
    pub mc: DualMc,
    /// `|V(grid) - V(grid/2)| + |mean(fine - coarse)| + 3 SE(fine - coarse)`.
    pub budget: f64,
}

impl CrossCheck {
    pub fn gap(&self) -> f64 {
        (self.v_pde - self.mc.fine.mean).abs()
    }

    pub fn passes(&self) -> bool {
        self.gap() <= 3.0 * self.mc.fine.std_error + self.budget
    }
}

/// Compares `e^{-h(0, z0)}` with the Monte Carlo annuity under the PDE's own `psi`.
pub fn cross_check(
    model: &Model,
    grid: PdeGrid,
    bounds: PsiBounds,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<CrossCheck> {
    let z0 = model.market.z0;
    let dual = solve_pde(model, grid, bounds)?;
    let coarse = solve_pde(model, grid.halved(), bounds)?;
    let v_pde = dual.annuity(0.0, z0);
    let v_pde_coarse = coarse.annuity(0.0, z0);
    let mc = mc_dual_value(model, &dual, n_paths, n_steps, seed)?;
    let budget =
        (v_pde - v_pde_coarse).abs() + mc.refinement.mean.abs() + 3.0 * mc.refinement.std_error;
    Ok(CrossCheck {
        v_pde,
        v_pde_coarse,
        mc,
        budget,
    })
}
