//! Market, mortality, income and preference inputs; admissibility scans;
//! actuarial quantities; simulation of the primitive processes.

pub(crate) mod sim;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use sim::{simulate_asset, simulate_factor, DriftMode, Measure, PathBundle, PsiPolicy};

use crate::coef::{Coef, TimeFn};
use crate::math::{cumulative_simpson, exp, simpson, sqrt};
use crate::{Error, Result};

/// Coefficients of the bond, the economic factor and the risky asset.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    pub r: TimeFn,
    pub alpha: Coef,
    pub beta: Coef,
    pub sigma: Coef,
    pub gamma: Coef,
    /// Drift of the economic factor; only its `z` dependence is meant to matter.
    pub eta: Coef,
    pub lambda: TimeFn,
    pub corr_w1w2: f64,
    pub s0: f64,
    pub z0: f64,
    pub x0: f64,
    /// Bound `K` in `|alpha| + |beta| <= K`, `|sigma| <= K (1 + |z|)`.
    pub growth_bound: f64,
    /// Lipschitz constant declared for `eta`.
    pub lipschitz_bound: f64,
}

impl MarketParams {
    /// Constant-coefficient market with a driftless factor started at zero.
    pub fn constant(r: f64, alpha: f64, beta: f64, sigma: f64, gamma: f64, lambda: f64) -> Self {
        MarketParams {
            r: r.into(),
            alpha: alpha.into(),
            beta: beta.into(),
            sigma: sigma.into(),
            gamma: gamma.into(),
            eta: Coef::Constant(0.0),
            lambda: lambda.into(),
            corr_w1w2: 0.0,
            s0: 1.0,
            z0: 0.0,
            x0: 1.0,
            growth_bound: 10.0,
            lipschitz_bound: 10.0,
        }
    }

    /// True when no asset coefficient depends on the factor.
    pub fn is_z_free(&self) -> bool {
        self.alpha.is_z_free()
            && self.beta.is_z_free()
            && self.sigma.is_z_free()
            && self.gamma.is_z_free()
            && self.eta.is_z_free()
    }

    #[inline]
    pub(crate) fn coefficients(&self, t: f64, z: f64) -> Coefficients {
        Coefficients {
            r: self.r.eval(t),
            alpha: self.alpha.eval(t, z),
            beta: self.beta.eval(t, z),
            sigma: self.sigma.eval(t, z),
            gamma: self.gamma.eval(t, z),
            lambda: self.lambda.eval(t),
        }
    }
}

/// Asset coefficients frozen at one `(t, z)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Coefficients {
    pub r: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Coefficients {
    #[inline]
    pub fn vol2(&self) -> f64 {
        self.beta * self.beta + self.sigma * self.sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MortalityCurve {
    pub mu: TimeFn,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncomeSpec {
    pub ell: TimeFn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceSpec {
    pub rho: TimeFn,
    pub kappa: f64,
    pub delta: f64,
}

impl PreferenceSpec {
    pub fn new(rho: impl Into<TimeFn>, kappa: f64, delta: f64) -> Result<Self> {
        if delta == 0.0 || delta >= 1.0 || !delta.is_finite() {
            return Err(Error::invalid(format!(
                "CRRA exponent must lie in (-inf, 1) without 0, got {delta}"
            )));
        }
        if kappa < 0.0 || !kappa.is_finite() {
            return Err(Error::invalid(format!(
                "utility discount must be >= 0, got {kappa}"
            )));
        }
        Ok(PreferenceSpec {
            rho: rho.into(),
            kappa,
            delta,
        })
    }
}

/// Everything the control problem needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub market: MarketParams,
    pub mortality: MortalityCurve,
    pub income: IncomeSpec,
    pub prefs: PreferenceSpec,
}

impl Model {
    pub fn horizon(&self) -> f64 {
        self.mortality.horizon
    }

    /// Initial wealth plus human capital.
    pub fn y0(&self) -> f64 {
        self.market.x0 + human_capital(&self.market, &self.mortality, &self.income, 0.0)
    }
}

/// Uniform time grid on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() || n_steps == 0 {
            return Err(Error::invalid(format!(
                "time grid needs a positive horizon and at least one step (got {horizon}, {n_steps})"
            )));
        }
        Ok(TimeGrid { horizon, n_steps })
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    #[inline]
    pub fn t(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.t(i)).collect()
    }
}

/// `z` range over which coefficient invariants are scanned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationDomain {
    pub z_min: f64,
    pub z_max: f64,
    pub n_z: usize,
}

impl ValidationDomain {
    /// Six standard deviations of the unit-diffusion factor over the horizon.
    pub fn around(z0: f64, horizon: f64) -> Self {
        let w = 6.0 * sqrt(horizon);
        ValidationDomain {
            z_min: z0 - w,
            z_max: z0 + w,
            n_z: 101,
        }
    }

    fn z(&self, j: usize) -> f64 {
        if self.n_z <= 1 {
            return self.z_min;
        }
        self.z_min + (self.z_max - self.z_min) * j as f64 / (self.n_z - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    GammaAtMostMinusOne,
    UnboundedDriftOrLoading,
    LinearGrowth,
    DegenerateVolatility,
    NegativeIntensity,
    NegativeMortality,
    EtaNotLipschitz,
    CorrelationOutOfRange,
    NonPositiveInitial,
    NonFinite,
}

impl ViolationKind {
    pub fn describe(&self) -> &'static str {
        match self {
            ViolationKind::GammaAtMostMinusOne => "gamma <= -1",
            ViolationKind::UnboundedDriftOrLoading => "|alpha| + |beta| > K",
            ViolationKind::LinearGrowth => "|sigma| > K (1 + |z|)",
            ViolationKind::DegenerateVolatility => "beta^2 + sigma^2 = 0",
            ViolationKind::NegativeIntensity => "lambda < 0",
            ViolationKind::NegativeMortality => "mu < 0",
            ViolationKind::EtaNotLipschitz => "eta exceeds its Lipschitz bound",
            ViolationKind::CorrelationOutOfRange => "|corr| >= 1",
            ViolationKind::NonPositiveInitial => "s0 and x0 must be positive",
            ViolationKind::NonFinite => "non-finite coefficient",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub t: f64,
    pub z: f64,
    pub value: f64,
}

impl Violation {
    pub fn message(&self) -> String {
        format!(
            "{} at t={}, z={} (value {})",
            self.kind.describe(),
            self.t,
            self.z,
            self.value
        )
    }
}

/// Scans the coefficient invariants on every `(t, z)` node of `grid x domain`.
/// Each kind of violation is reported once, at the first node where it occurs.
pub fn validate_params(
    p: &MarketParams,
    m: &MortalityCurve,
    grid: &TimeGrid,
    domain: &ValidationDomain,
) -> Vec<Violation> {
    let mut out: Vec<Violation> = Vec::new();
    let push = |out: &mut Vec<Violation>, kind, t, z, value| {
        if !out.iter().any(|v| v.kind == kind) {
            out.push(Violation { kind, t, z, value });
        }
    };
    if !(p.corr_w1w2.abs() < 1.0) {
        push(
            &mut out,
            ViolationKind::CorrelationOutOfRange,
            0.0,
            p.z0,
            p.corr_w1w2,
        );
    }
    if !(p.s0 > 0.0) || !(p.x0 > 0.0) {
        push(
            &mut out,
            ViolationKind::NonPositiveInitial,
            0.0,
            p.z0,
            p.s0.min(p.x0),
        );
    }
    let k = p.growth_bound;
    for i in 0..=grid.n_steps {
        let t = grid.t(i);
        let lambda = p.lambda.eval(t);
        let mu = m.mu.eval(t);
        if !lambda.is_finite() || !mu.is_finite() || !p.r.eval(t).is_finite() {
            push(&mut out, ViolationKind::NonFinite, t, p.z0, f64::NAN);
        }
        if lambda < 0.0 {
            push(&mut out, ViolationKind::NegativeIntensity, t, p.z0, lambda);
        }
        if mu < 0.0 {
            push(&mut out, ViolationKind::NegativeMortality, t, p.z0, mu);
        }
        let mut prev_eta: Option<(f64, f64)> = None;
        for j in 0..domain.n_z {
            let z = domain.z(j);
            let c = p.coefficients(t, z);
            let eta = p.eta.eval(t, z);
            if [c.alpha, c.beta, c.sigma, c.gamma, eta]
                .iter()
                .any(|v| !v.is_finite())
            {
                push(&mut out, ViolationKind::NonFinite, t, z, f64::NAN);
                continue;
            }
            if c.gamma <= -1.0 {
                push(&mut out, ViolationKind::GammaAtMostMinusOne, t, z, c.gamma);
            }
            if c.alpha.abs() + c.beta.abs() > k {
                push(
                    &mut out,
                    ViolationKind::UnboundedDriftOrLoading,
                    t,
                    z,
                    c.alpha.abs() + c.beta.abs(),
                );
            }
            if c.sigma.abs() > k * (1.0 + z.abs()) {
                push(&mut out, ViolationKind::LinearGrowth, t, z, c.sigma);
            }
            if c.vol2() <= 0.0 {
                push(
                    &mut out,
                    ViolationKind::DegenerateVolatility,
                    t,
                    z,
                    c.vol2(),
                );
            }
            if let Some((zp, ep)) = prev_eta {
                let slope = (eta - ep).abs() / (z - zp);
                if slope > p.lipschitz_bound * (1.0 + 1e-12) {
                    push(&mut out, ViolationKind::EtaNotLipschitz, t, z, slope);
                }
            }
            prev_eta = Some((z, eta));
        }
    }
    out
}

const QUAD_INTERVALS: usize = 2000;

fn check_time(m: &MortalityCurve, t: f64) -> Result<()> {
    if !(0.0..=m.horizon).contains(&t) {
        return Err(Error::TimeOutOfRange {
            t,
            horizon: m.horizon,
        });
    }
    Ok(())
}

/// Conditional survival probability `exp(-int_0^t mu)`.
pub fn survival_prob(m: &MortalityCurve, t: f64) -> Result<f64> {
    check_time(m, t)?;
    Ok(exp(-simpson(|s| m.mu.eval(s), 0.0, t, QUAD_INTERVALS)))
}

/// Density of the time of death, `mu(t)` times the survival probability.
pub fn death_density(m: &MortalityCurve, t: f64) -> Result<f64> {
    Ok(m.mu.eval(t) * survival_prob(m, t)?)
}

/// Actuarial value at `t` of the remaining labor income, discounted at `r + mu`.
pub fn human_capital(p: &MarketParams, m: &MortalityCurve, inc: &IncomeSpec, t: f64) -> f64 {
    let horizon = m.horizon;
    if t >= horizon {
        return 0.0;
    }
    let t = t.max(0.0);
    let n = QUAD_INTERVALS;
    let h = (horizon - t) / n as f64;
    let inner = cumulative_simpson(|s| p.r.eval(s) + m.mu.eval(s), t, horizon, n);
    let integrand = |i: usize| {
        let s = if i == n { horizon } else { t + i as f64 * h };
        exp(-inner[i]) * inc.ell.eval(s)
    };
    let mut acc = integrand(0) + integrand(n);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * integrand(i);
    }
    acc * h / 3.0
}

/// Deterministic integrals tabulated on a simulation grid.
#[derive(Debug, Clone)]
pub struct DeterministicTables {
    pub grid: TimeGrid,
    pub r: Vec<f64>,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub lambda: Vec<f64>,
    pub ell: Vec<f64>,
    /// `int_0^t (r + mu)`
    pub cum_r_mu: Vec<f64>,
    /// `int_0^t (rho + mu)`
    pub cum_rho_mu: Vec<f64>,
    /// `int_0^t (rho - r)`
    pub cum_rho_minus_r: Vec<f64>,
    /// Human capital `g(t)`.
    pub human_capital: Vec<f64>,
    /// `int_0^t e^{-int_0^s (r + mu)} ell(s) ds`
    pub cum_disc_income: Vec<f64>,
}

impl DeterministicTables {
    pub fn new(model: &Model, grid: TimeGrid) -> Self {
        let p = &model.market;
        let m = &model.mortality;
        let n = grid.n_steps;
        let nodes = grid.nodes();
        let rate = |s: f64| p.r.eval(s) + m.mu.eval(s);
        let cum_r_mu = cumulative_simpson(rate, 0.0, grid.horizon, n);
        let cum_rho_mu = cumulative_simpson(
            |s| model.prefs.rho.eval(s) + m.mu.eval(s),
            0.0,
            grid.horizon,
            n,
        );
        let cum_rho_minus_r = cumulative_simpson(
            |s| model.prefs.rho.eval(s) - p.r.eval(s),
            0.0,
            grid.horizon,
            n,
        );
        // discount at arbitrary s from the nearest node to its left
        let dt = grid.dt();
        let disc = |s: f64| {
            let i = ((s / dt) as usize).min(n);
            let base = cum_r_mu[i];
            let t_i = grid.t(i);
            exp(-(base + simpson(rate, t_i, s, 2)))
        };
        let cum_disc_income =
            cumulative_simpson(|s| disc(s) * model.income.ell.eval(s), 0.0, grid.horizon, n);
        let total = cum_disc_income[n];
        let human_capital = (0..=n)
            .map(|i| {
                if i == n {
                    0.0
                } else {
                    exp(cum_r_mu[i]) * (total - cum_disc_income[i])
                }
            })
            .collect();
        DeterministicTables {
            grid,
            r: nodes.iter().map(|&t| p.r.eval(t)).collect(),
            mu: nodes.iter().map(|&t| m.mu.eval(t)).collect(),
            rho: nodes.iter().map(|&t| model.prefs.rho.eval(t)).collect(),
            lambda: nodes.iter().map(|&t| p.lambda.eval(t)).collect(),
            ell: nodes.iter().map(|&t| model.income.ell.eval(t)).collect(),
            cum_r_mu,
            cum_rho_mu,
            cum_rho_minus_r,
            human_capital,
            cum_disc_income,
        }
    }

    /// `int_{t_i}^{t_{i+1}} (r + mu)`.
    #[inline]
    pub fn step_r_mu(&self, i: usize) -> f64 {
        self.cum_r_mu[i + 1] - self.cum_r_mu[i]
    }
}
