//! American put on the optimal portfolio with strike `k(t, D(t)) + g(t)`.
//!
//! Exercise is allowed on every `exercise_stride`-th simulation node, so the
//! price is that of the Bermudan approximation on those dates. Paths are
//! simulated once under `Q` for the unrestricted optimum; a put on `rho Y*`
//! reuses them because `rho Y*` and the accrual `D` are affine in `rho`.

use alloc::vec;
use alloc::vec::Vec;

use crate::coef::TimeFn;
use crate::market::{Model, PsiPolicy};
use crate::math::{cholesky_solve, cumulative_simpson, exp, simpson, sqrt, McEstimate};
use crate::measure::risk_prices;
use crate::par::map_indices;
use crate::strategy::{jump_ratio, WealthEngine};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuaranteeKind {
    /// `k = 0`: wealth must stay nonnegative.
    Zero,
    /// Capital `base` plus net contributions, rolled up at `r_g + mu`.
    RateGuarantee,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuaranteeSpec {
    pub kind: GuaranteeKind,
    pub r_g: TimeFn,
    pub base: f64,
}

impl GuaranteeSpec {
    pub fn zero() -> Self {
        GuaranteeSpec {
            kind: GuaranteeKind::Zero,
            r_g: 0.0.into(),
            base: 0.0,
        }
    }

    /// `k` given the roll-up factor `e^{int_0^t (r_g + mu)}` and the discounted accrual `d`.
    #[inline]
    pub fn level(&self, growth: f64, d: f64) -> f64 {
        match self.kind {
            GuaranteeKind::Zero => 0.0,
            GuaranteeKind::RateGuarantee => (self.base + d) * growth,
        }
    }

    /// Rejects a guaranteed rate above the risk-free rate on the grid.
    pub fn check(&self, model: &Model, n: usize) -> Result<()> {
        if self.kind == GuaranteeKind::Zero {
            return Ok(());
        }
        let horizon = model.horizon();
        for i in 0..=n {
            let t = horizon * i as f64 / n as f64;
            if self.r_g.eval(t) > model.market.r.eval(t) {
                return Err(Error::invalid(alloc::format!(
                    "guaranteed rate exceeds the risk-free rate at t={t}"
                )));
            }
        }
        Ok(())
    }
}

/// `k(t, d)` with the roll-up integral evaluated by quadrature.
pub fn guarantee_level(spec: &GuaranteeSpec, model: &Model, t: f64, d: f64) -> f64 {
    let growth = exp(simpson(
        |s| spec.r_g.eval(s) + model.mortality.mu.eval(s),
        0.0,
        t,
        2000,
    ));
    spec.level(growth, d)
}

/// Discounted accrual `d(t) = int_0^t e^{-int_0^s (r_g + mu)} (ell - c - mu p) ds`
/// for deterministic rate paths sampled on a uniform grid (left-point rule).
pub fn accrual(spec: &GuaranteeSpec, model: &Model, ts: &[f64], net: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ts.len());
    let mut d = 0.0;
    let mut cum = 0.0;
    out.push(0.0);
    for i in 1..ts.len() {
        let w = exp(-cum);
        d += w * net[i - 1] * (ts[i] - ts[i - 1]);
        cum += simpson(
            |s| spec.r_g.eval(s) + model.mortality.mu.eval(s),
            ts[i - 1],
            ts[i],
            4,
        );
        out.push(d);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PutConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub exercise_stride: usize,
    pub basis_degree: usize,
    pub d_bins: usize,
    pub z_bins: usize,
}

impl Default for PutConfig {
    fn default() -> Self {
        PutConfig {
            n_paths: 100_000,
            seed: 7,
            exercise_stride: 5,
            basis_degree: 3,
            d_bins: 10,
            z_bins: 10,
        }
    }
}

/// Polynomial regression in standardised state variables `(y, d, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub degree: usize,
    active: [bool; 3],
    mean: [f64; 3],
    scale: [f64; 3],
    terms: Vec<[u8; 3]>,
    pub coef: Vec<f64>,
}

impl Regression {
    fn constant(value: f64) -> Self {
        Regression {
            degree: 0,
            active: [false; 3],
            mean: [0.0; 3],
            scale: [1.0; 3],
            terms: vec![[0, 0, 0]],
            coef: vec![value],
        }
    }

    #[inline]
    fn basis(&self, x: [f64; 3], out: &mut [f64]) {
        let mut u = [0.0; 3];
        for v in 0..3 {
            if self.active[v] {
                u[v] = (x[v] - self.mean[v]) / self.scale[v];
            }
        }
        for (slot, e) in out.iter_mut().zip(&self.terms) {
            let mut m = 1.0;
            for v in 0..3 {
                for _ in 0..e[v] {
                    m *= u[v];
                }
            }
            *slot = m;
        }
    }

    #[inline]
    pub fn eval(&self, x: [f64; 3]) -> f64 {
        let mut phi = [0.0; 20];
        let p = self.terms.len();
        self.basis(x, &mut phi[..p]);
        phi[..p].iter().zip(&self.coef).map(|(a, b)| a * b).sum()
    }
}

fn monomials(active: [bool; 3], degree: usize) -> Vec<[u8; 3]> {
    let mut out = Vec::new();
    for total in 0..=degree {
        for a in 0..=total {
            for b in 0..=total - a {
                let c = total - a - b;
                let e = [a as u8, b as u8, c as u8];
                if (0..3).all(|v| active[v] || e[v] == 0) {
                    out.push(e);
                }
            }
        }
    }
    out
}

/// Least squares on `idx`; lowers the degree until the normal equations are
/// well posed. Returns the fit and whether the degree had to be lowered.
fn regress<S: Fn(usize) -> [f64; 3]>(
    state: S,
    target: &[f64],
    idx: &[usize],
    use_vars: [bool; 3],
    max_degree: usize,
) -> (Regression, bool) {
    let n = idx.len();
    if n == 0 {
        return (Regression::constant(0.0), false);
    }
    let mut mean = [0.0; 3];
    let mut scale = [1.0; 3];
    let mut active = use_vars;
    for v in 0..3 {
        if !use_vars[v] {
            continue;
        }
        let m = idx.iter().map(|&k| state(k)[v]).sum::<f64>() / n as f64;
        let var = idx
            .iter()
            .map(|&k| {
                let e = state(k)[v] - m;
                e * e
            })
            .sum::<f64>()
            / n as f64;
        let sd = sqrt(var);
        mean[v] = m;
        if sd > 1e-12 * (1.0 + m.abs()) {
            scale[v] = sd;
        } else {
            active[v] = false;
        }
    }
    let mut reduced = false;
    for degree in (0..=max_degree).rev() {
        let terms = monomials(active, degree);
        let p = terms.len();
        if p > n {
            reduced = true;
            continue;
        }
        let mut reg = Regression {
            degree,
            active,
            mean,
            scale,
            terms,
            coef: Vec::new(),
        };
        let mut a = vec![0.0; p * p];
        let mut b = vec![0.0; p];
        let mut phi = [0.0; 20];
        for &k in idx {
            reg.basis(state(k), &mut phi[..p]);
            let y = target[k];
            for i in 0..p {
                b[i] += phi[i] * y;
                for j in 0..=i {
                    a[i * p + j] += phi[i] * phi[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                a[j * p + i] = a[i * p + j];
            }
        }
        if let Some(coef) = cholesky_solve(&a, &b, p, 1e-13) {
            reg.coef = coef;
            return (reg, reduced);
        }
        reduced = true;
    }
    (Regression::constant(0.0), true)
}

type PathDates = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

/// Forward paths of the unrestricted optimum sampled on the exercise dates.
pub struct PutPaths<'a> {
    pub engine: &'a WealthEngine<'a>,
    pub spec: GuaranteeSpec,
    pub config: PutConfig,
    /// Simulation node index of each exercise date.
    pub date_nodes: Vec<usize>,
    pub times: Vec<f64>,
    /// `e^{-int_0^t (r + mu)}` on the dates.
    pub discount: Vec<f64>,
    pub human_capital: Vec<f64>,
    /// `e^{int_0^t (r_g + mu)}` on the dates.
    pub growth: Vec<f64>,
    /// Discounted income part of the accrual, common to all paths.
    pub d_income: Vec<f64>,
    /// `Y*` per `[date * n_paths + path]`.
    y: Vec<f64>,
    /// Discounted consumption-plus-premium part of the accrual for `rho = 1`.
    d_cons: Vec<f64>,
    /// Consumption and premiums paid before the date, discounted at `r + mu`, for `rho = 1`.
    paid: Vec<f64>,
    z: Vec<f64>,
    pub uses_d: bool,
    pub uses_z: bool,
}

impl<'a> PutPaths<'a> {
    pub fn simulate(
        engine: &'a WealthEngine<'a>,
        spec: GuaranteeSpec,
        config: PutConfig,
    ) -> Result<Self> {
        let model = engine.model;
        let tab = &engine.tables;
        let grid = tab.grid;
        let n = grid.n_steps;
        let stride = config.exercise_stride.max(1);
        spec.check(model, n)?;
        let mut date_nodes: Vec<usize> = (0..=n).step_by(stride).collect();
        if *date_nodes.last().unwrap() != n {
            date_nodes.push(n);
        }
        let m = date_nodes.len();
        let uses_d = spec.kind == GuaranteeKind::RateGuarantee;
        let uses_z = !model.market.is_z_free();
        let cum_g = cumulative_simpson(
            |s| spec.r_g.eval(s) + model.mortality.mu.eval(s),
            0.0,
            grid.horizon,
            n,
        );
        let dt = grid.dt();
        let mut d_inc_nodes = vec![0.0; n + 1];
        for i in 0..n {
            d_inc_nodes[i + 1] = d_inc_nodes[i] + exp(-cum_g[i]) * tab.ell[i] * dt;
        }
        let mut node_to_date = vec![usize::MAX; n + 1];
        for (j, &nd) in date_nodes.iter().enumerate() {
            node_to_date[nd] = j;
        }
        let y0 = engine.y0();
        let per_path = map_indices(config.n_paths, |k| -> Result<PathDates> {
            let mut ys = Vec::with_capacity(m);
            let mut ps = Vec::with_capacity(m);
            let mut paid = 0.0;
            let mut ds = Vec::with_capacity(if uses_d { m } else { 0 });
            let mut zs = Vec::with_capacity(if uses_z { m } else { 0 });
            let mut dc = 0.0;
            engine.walk(config.seed, k as u64, y0, |nd| {
                if node_to_date[nd.i] != usize::MAX {
                    ys.push(nd.y);
                    ps.push(paid);
                    if uses_d {
                        ds.push(dc);
                    }
                    if uses_z {
                        zs.push(nd.z);
                    }
                }
                paid += nd.payout;
                if uses_d && nd.i < n {
                    dc += exp(-cum_g[nd.i]) * (1.0 + tab.mu[nd.i]) * nd.y / nd.annuity * dt;
                }
            })?;
            Ok((ys, ps, ds, zs))
        });
        let np = config.n_paths;
        let mut y = vec![0.0; m * np];
        let mut paid = vec![0.0; m * np];
        let mut d_cons = vec![0.0; if uses_d { m * np } else { 0 }];
        let mut z = vec![0.0; if uses_z { m * np } else { 0 }];
        for (k, r) in per_path.into_iter().enumerate() {
            let (ys, ps, ds, zs) = r?;
            for j in 0..m {
                y[j * np + k] = ys[j];
                paid[j * np + k] = ps[j];
                if uses_d {
                    d_cons[j * np + k] = ds[j];
                }
                if uses_z {
                    z[j * np + k] = zs[j];
                }
            }
        }
        Ok(PutPaths {
            engine,
            times: date_nodes.iter().map(|&i| grid.t(i)).collect(),
            discount: date_nodes.iter().map(|&i| exp(-tab.cum_r_mu[i])).collect(),
            human_capital: date_nodes.iter().map(|&i| tab.human_capital[i]).collect(),
            growth: date_nodes.iter().map(|&i| exp(cum_g[i])).collect(),
            d_income: date_nodes.iter().map(|&i| d_inc_nodes[i]).collect(),
            date_nodes,
            spec,
            config,
            y,
            d_cons,
            paid,
            z,
            uses_d,
            uses_z,
        })
    }

    pub fn n_dates(&self) -> usize {
        self.date_nodes.len()
    }

    pub fn n_paths(&self) -> usize {
        self.config.n_paths
    }

    /// Unrestricted `Y*` of path `k` at date `j`.
    #[inline]
    pub fn y_star(&self, j: usize, k: usize) -> f64 {
        self.y[j * self.config.n_paths + k]
    }

    /// Discounted consumption-plus-premium accrual of path `k` at date `j` for `rho = 1`.
    #[inline]
    pub fn consumption_accrual(&self, j: usize, k: usize) -> f64 {
        if self.uses_d {
            self.d_cons[j * self.config.n_paths + k]
        } else {
            0.0
        }
    }

    /// Discounted payouts of path `k` before date `j` for `rho = 1`.
    #[inline]
    pub fn paid(&self, j: usize, k: usize) -> f64 {
        self.paid[j * self.config.n_paths + k]
    }

    /// Factor level of path `k` at date `j` (the initial level when it was not stored).
    #[inline]
    pub fn z_at(&self, j: usize, k: usize) -> f64 {
        if self.uses_z {
            self.z[j * self.config.n_paths + k]
        } else {
            self.engine.model.market.z0
        }
    }

    /// Regression state `(y, d, z)` of the put on `rho Y*`.
    #[inline]
    pub fn state(&self, j: usize, k: usize, rho: f64) -> [f64; 3] {
        let idx = j * self.config.n_paths + k;
        let d = if self.uses_d {
            self.d_income[j] - rho * self.d_cons[idx]
        } else {
            0.0
        };
        let z = if self.uses_z { self.z[idx] } else { 0.0 };
        [rho * self.y[idx], d, z]
    }

    /// Strike `k(t_j, d) + g(t_j)`.
    #[inline]
    pub fn strike(&self, j: usize, d: f64) -> f64 {
        self.spec.level(self.growth[j], d) + self.human_capital[j]
    }

    #[inline]
    pub fn intrinsic(&self, j: usize, x: [f64; 3]) -> f64 {
        (self.strike(j, x[1]) - x[0]).max(0.0)
    }

    fn vars(&self) -> [bool; 3] {
        [true, self.uses_d, self.uses_z]
    }

    /// Longstaff-Schwartz price of the put on `rho Y*` at time zero.
    ///
    /// Exercise decisions regress on in-the-money paths only. A second fit of
    /// the same realised cash flows on all paths gives the put value at any
    /// state on a date, which is what the insured wealth needs along a path.
    pub fn lsm(&self, rho: f64) -> PutQuote {
        let np = self.config.n_paths;
        let m = self.n_dates();
        let last = m - 1;
        let all: Vec<usize> = (0..np).collect();
        let mut value = vec![0.0; np];
        let mut flags = ExerciseFlags::new(np, m);
        for k in 0..np {
            let x = self.state(last, k, rho);
            let pay = self.intrinsic(last, x);
            value[k] = self.discount[last] * pay;
            if pay > 0.0 {
                flags.set(k, last);
            }
        }
        let european = McEstimate::from_samples(&value);
        let mut reductions = 0;
        let mut cont = vec![0.0; np];
        let mut regs: Vec<Option<Regression>> = vec![None; m];
        let mut residual_sd = vec![0.0; m];
        let mut bins = BoundaryBuilder::new(self, rho);
        bins.record_date(self, rho, last, &flags);
        for j in (1..last).rev() {
            let disc = self.discount[j];
            let mut itm = Vec::new();
            for k in 0..np {
                if self.intrinsic(j, self.state(j, k, rho)) > 0.0 {
                    itm.push(k);
                }
                cont[k] = value[k] / disc;
            }
            let (fit, reduced) = regress(
                |k| self.state(j, k, rho),
                &cont,
                &all,
                self.vars(),
                self.config.basis_degree,
            );
            reductions += reduced as usize;
            let mut ss = 0.0;
            for k in 0..np {
                let e = cont[k] - fit.eval(self.state(j, k, rho));
                ss += e * e;
            }
            residual_sd[j] = sqrt(ss / np as f64);
            regs[j] = Some(fit);
            if itm.is_empty() {
                continue;
            }
            let (reg, reduced) = regress(
                |k| self.state(j, k, rho),
                &cont,
                &itm,
                self.vars(),
                self.config.basis_degree,
            );
            reductions += reduced as usize;
            for &k in &itm {
                let x = self.state(j, k, rho);
                let pay = self.intrinsic(j, x);
                if pay > reg.eval(x) {
                    value[k] = disc * pay;
                    flags.set(k, j);
                }
            }
            bins.record_date(self, rho, j, &flags);
        }
        let hold = McEstimate::from_samples(&value);
        let intrinsic0 = self.intrinsic(0, self.state(0, 0, rho));
        let (price, std_error, exercise_now) = if intrinsic0 > hold.mean {
            (intrinsic0, 0.0, true)
        } else {
            (hold.mean, hold.std_error, false)
        };
        if exercise_now {
            for k in 0..np {
                flags.set(k, 0);
            }
        }
        bins.record_date(self, rho, 0, &flags);
        PutQuote {
            rho,
            price,
            std_error,
            european: european.mean,
            european_se: european.std_error,
            intrinsic0,
            exercise: flags,
            boundary: bins.finish(),
            valuation: PutValuation {
                rho,
                price0: price,
                std_error0: std_error,
                regressions: regs,
                residual_sd,
            },
            degree_reductions: reductions,
        }
    }

    /// Price of the put on `rho Y*` when every path stops where `flags` says.
    /// Piecewise linear and nonincreasing in `rho`.
    pub fn price_with_policy(&self, flags: &ExerciseFlags, rho: f64) -> McEstimate {
        let pay: Vec<f64> = (0..self.config.n_paths)
            .map(|k| match flags.stopping_date(k) {
                Some(j) => self.discount[j] * self.intrinsic(j, self.state(j, k, rho)),
                None => 0.0,
            })
            .collect();
        McEstimate::from_samples(&pay)
    }
}

/// Put values along paths, from the all-path fits of [`PutPaths::lsm`].
#[derive(Debug, Clone, PartialEq)]
pub struct PutValuation {
    pub rho: f64,
    pub price0: f64,
    pub std_error0: f64,
    regressions: Vec<Option<Regression>>,
    /// Root mean square regression residual per date, a per-node error scale.
    pub residual_sd: Vec<f64>,
}

impl PutValuation {
    /// Put value at date `j` for state `x`; never below intrinsic.
    pub fn value(&self, paths: &PutPaths<'_>, j: usize, x: [f64; 3]) -> f64 {
        let intrinsic = paths.intrinsic(j, x);
        if j == 0 {
            return self.price0.max(intrinsic);
        }
        match &self.regressions[j] {
            Some(reg) => intrinsic.max(reg.eval(x).max(0.0)),
            None => intrinsic,
        }
    }

    /// Standard error of the fitted value at date `j`, from the residual spread.
    pub fn node_error(&self, j: usize, n_paths: usize) -> f64 {
        if j == 0 {
            return self.std_error0;
        }
        self.residual_sd[j] / sqrt(n_paths as f64)
    }
}

/// Exercise decisions, one bit per `(path, date)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExerciseFlags {
    n_dates: usize,
    bits: Vec<u64>,
}

impl ExerciseFlags {
    fn new(n_paths: usize, n_dates: usize) -> Self {
        ExerciseFlags {
            n_dates,
            bits: vec![0; (n_paths * n_dates).div_ceil(64)],
        }
    }

    fn set(&mut self, path: usize, date: usize) {
        let b = path * self.n_dates + date;
        self.bits[b / 64] |= 1 << (b % 64);
    }

    pub fn get(&self, path: usize, date: usize) -> bool {
        let b = path * self.n_dates + date;
        self.bits[b / 64] >> (b % 64) & 1 == 1
    }

    /// First date at which the rule stops path `path`.
    pub fn stopping_date(&self, path: usize) -> Option<usize> {
        (0..self.n_dates).find(|&j| self.get(path, j))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PutQuote {
    pub rho: f64,
    pub price: f64,
    pub std_error: f64,
    pub european: f64,
    pub european_se: f64,
    pub intrinsic0: f64,
    pub exercise: ExerciseFlags,
    pub boundary: BoundaryEstimate,
    pub valuation: PutValuation,
    pub degree_reductions: usize,
}

/// Largest exercised `y` per `(date, d-bin)` and per `(date, z-bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEstimate {
    pub times: Vec<f64>,
    pub d_lo: Vec<f64>,
    pub d_hi: Vec<f64>,
    pub d_bins: usize,
    /// `[date * d_bins + bin]`, `None` where nothing was exercised.
    pub b: Vec<Option<f64>>,
    /// Largest strike seen in each `(date, d-bin)`.
    pub strike_max: Vec<f64>,
    pub z_lo: Vec<f64>,
    pub z_hi: Vec<f64>,
    pub z_bins: usize,
    pub b_z: Vec<Option<f64>>,
}

fn bin_of(lo: f64, hi: f64, n: usize, x: f64) -> usize {
    if n <= 1 || !(hi > lo) {
        return 0;
    }
    let s = libm::floor((x - lo) / (hi - lo) * n as f64);
    if s <= 0.0 {
        0
    } else {
        (s as usize).min(n - 1)
    }
}

impl BoundaryEstimate {
    /// `b(t_j, d)` at a date, nearest bin in `d`; `None` if never exercised there.
    pub fn at_date(&self, j: usize, d: f64) -> Option<f64> {
        let bin = bin_of(self.d_lo[j], self.d_hi[j], self.d_bins, d);
        self.b[j * self.d_bins + bin]
    }

    /// `b(t, d)`: nearest `d` bin, linear in `t` between dates, missing bins count as zero.
    pub fn lookup(&self, t: f64, d: f64) -> f64 {
        let (j, w) = crate::math::locate(&self.times, t);
        let v0 = self.at_date(j, d).unwrap_or(0.0);
        if self.times.len() == 1 {
            return v0;
        }
        let v1 = self.at_date(j + 1, d).unwrap_or(0.0);
        v0 + w * (v1 - v0)
    }

    pub fn is_empty(&self) -> bool {
        self.b.iter().all(|v| v.is_none())
    }
}

struct BoundaryBuilder {
    est: BoundaryEstimate,
}

impl BoundaryBuilder {
    fn new(paths: &PutPaths<'_>, rho: f64) -> Self {
        let m = paths.n_dates();
        let np = paths.n_paths();
        let d_bins = if paths.uses_d {
            paths.config.d_bins.max(1)
        } else {
            1
        };
        let z_bins = if paths.uses_z {
            paths.config.z_bins.max(1)
        } else {
            1
        };
        let mut d_lo = vec![0.0; m];
        let mut d_hi = vec![0.0; m];
        let mut z_lo = vec![paths.engine.model.market.z0; m];
        let mut z_hi = vec![paths.engine.model.market.z0; m];
        for j in 0..m {
            if paths.uses_d || paths.uses_z {
                let (mut dl, mut dh, mut zl, mut zh) = (
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                );
                for k in 0..np {
                    let x = paths.state(j, k, rho);
                    dl = dl.min(x[1]);
                    dh = dh.max(x[1]);
                    zl = zl.min(x[2]);
                    zh = zh.max(x[2]);
                }
                d_lo[j] = dl;
                d_hi[j] = dh;
                if paths.uses_z {
                    z_lo[j] = zl;
                    z_hi[j] = zh;
                }
            }
        }
        BoundaryBuilder {
            est: BoundaryEstimate {
                times: paths.times.clone(),
                d_lo,
                d_hi,
                d_bins,
                b: vec![None; m * d_bins],
                strike_max: vec![f64::NEG_INFINITY; m * d_bins],
                z_lo,
                z_hi,
                z_bins,
                b_z: vec![None; m * z_bins],
            },
        }
    }

    fn record_date(&mut self, paths: &PutPaths<'_>, rho: f64, j: usize, flags: &ExerciseFlags) {
        let e = &mut self.est;
        for k in 0..paths.n_paths() {
            let x = paths.state(j, k, rho);
            let db = bin_of(e.d_lo[j], e.d_hi[j], e.d_bins, x[1]);
            let slot = j * e.d_bins + db;
            e.strike_max[slot] = e.strike_max[slot].max(paths.strike(j, x[1]));
            if !flags.get(k, j) {
                continue;
            }
            e.b[slot] = Some(e.b[slot].map_or(x[0], |b: f64| b.max(x[0])));
            let zb = bin_of(e.z_lo[j], e.z_hi[j], e.z_bins, paths.z_at(j, k));
            let zs = j * e.z_bins + zb;
            e.b_z[zs] = Some(e.b_z[zs].map_or(x[0], |b: f64| b.max(x[0])));
        }
    }

    fn finish(self) -> BoundaryEstimate {
        self.est
    }
}

/// Boundary of a quote.
pub fn exercise_boundary(quote: &PutQuote) -> BoundaryEstimate {
    quote.boundary.clone()
}

/// `A phi - (r + mu) phi` at `(t, y, z)` by finite differences, with `A` the
/// generator of `(t, Y*, Z)` under `Q`. The jump part uses the `Q`
/// intensity `psi lambda`, and the cross term carries the factor `y` that the
/// product of the `Y*` and `Z` loadings gives.
pub fn generator_residual<F: Fn(f64, f64, f64) -> f64>(
    model: &Model,
    dual: &crate::dual::DualGrid,
    phi: F,
    t: f64,
    y: f64,
    z: f64,
) -> Result<f64> {
    let horizon = model.horizon();
    if !(0.0..horizon).contains(&t) || !(y > 0.0) {
        return Err(Error::invalid("generator stencil leaves the domain"));
    }
    let p = &model.market;
    let d = model.prefs.delta;
    let e = 1.0 - d;
    let psi = dual.psi(t, z);
    let (nu, theta) = risk_prices(p, t, z, psi)?;
    let r = p.r.eval(t);
    let mu = model.mortality.mu.eval(t);
    let lambda = p.lambda.eval(t);
    let annuity = dual.annuity(t, z);
    let ht = 1e-4 * horizon.min(1.0);
    let hy = 1e-3 * y;
    let hz = 1e-3;
    let f0 = phi(t, y, z);
    let f_t = if t + ht <= horizon {
        (phi(t + ht, y, z) - f0) / ht
    } else {
        (f0 - phi(t - ht, y, z)) / ht
    };
    let f_y = (phi(t, y + hy, z) - phi(t, y - hy, z)) / (2.0 * hy);
    let f_yy = (phi(t, y + hy, z) - 2.0 * f0 + phi(t, y - hy, z)) / (hy * hy);
    let f_z = (phi(t, y, z + hz) - phi(t, y, z - hz)) / (2.0 * hz);
    let f_zz = (phi(t, y, z + hz) - 2.0 * f0 + phi(t, y, z - hz)) / (hz * hz);
    let f_yz = (phi(t, y + hy, z + hz) - phi(t, y + hy, z - hz) - phi(t, y - hy, z + hz)
        + phi(t, y - hy, z - hz))
        / (4.0 * hy * hz);
    let jr = jump_ratio(psi, d);
    let jump = phi(t, y * (1.0 + jr), z) - f0 - y * jr * f_y;
    let a = f_t
        + (r + mu - (1.0 + mu) / annuity) * y * f_y
        + (p.eta.eval(t, z) + nu) * f_z
        + 0.5 * f_zz
        + 0.5 * (nu * nu + theta * theta) / (e * e) * y * y * f_yy
        - nu / e * y * f_yz
        + jump * psi * lambda;
    Ok(a - (r + mu) * f0)
}
