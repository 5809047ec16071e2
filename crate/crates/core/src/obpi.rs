//! Option-based portfolio insurance on the unrestricted optimum.
//!
//! The insured wealth is `X^ = rho Y* + P - g`, where `P` is the American put
//! on `rho Y*` struck at `k + g` and `rho` is the running maximum of `rho0`
//! and `b/Y*`. The put dominates its intrinsic value, so `X^ >= k` at every
//! node up to the error of the fitted put value.

use alloc::vec;
use alloc::vec::Vec;

use crate::market::PsiPolicy;
use crate::math::McEstimate;
use crate::par::map_indices;
use crate::put::{BoundaryEstimate, ExerciseFlags, PutPaths, PutQuote, PutValuation};
use crate::strategy::{optimal_allocation, optimal_consumption_insurance};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatchetEvent {
    pub t: f64,
    pub old: f64,
    pub new: f64,
}

/// Running fraction of the unrestricted portfolio that is held.
#[derive(Debug, Clone, PartialEq)]
pub struct RatchetState {
    pub rho: f64,
    /// `sup b(s, D(s)) / Y*(s)` seen so far.
    pub sup_ratio: f64,
    pub events: Vec<RatchetEvent>,
}

impl RatchetState {
    pub fn new(rho0: f64) -> Result<Self> {
        if !(rho0 > 0.0 && rho0 <= 1.0) {
            return Err(Error::invalid(alloc::format!(
                "initial fraction must lie in (0, 1], got {rho0}"
            )));
        }
        Ok(RatchetState {
            rho: rho0,
            sup_ratio: 0.0,
            events: Vec::new(),
        })
    }
}

/// `rho(t) = max(rho, b_t / Y*(t))`.
///
/// Not capped at one: where the boundary exceeds `Y*` the unrestricted wealth
/// is below the floor and only a fraction above one keeps the budget.
pub fn ratchet_fraction(state: &mut RatchetState, t: f64, b_t: f64, y_star: f64) -> Result<f64> {
    if !(y_star > 0.0) {
        return Err(Error::NonPositiveWealth { value: y_star });
    }
    let ratio = b_t / y_star;
    if ratio > state.sup_ratio {
        state.sup_ratio = ratio;
    }
    if ratio > state.rho {
        state.events.push(RatchetEvent {
            t,
            old: state.rho,
            new: ratio,
        });
        state.rho = ratio;
    }
    Ok(state.rho)
}

/// `(rho c*, rho pi*, rho p*)` at `(t, z, Y*)`.
pub fn restricted_strategy(
    model: &crate::market::Model,
    dual: &crate::dual::DualGrid,
    rho: f64,
    y_star: f64,
    t: f64,
    z: f64,
) -> Result<(f64, f64, f64)> {
    let (c, p) = optimal_consumption_insurance(dual.annuity(t, z), y_star, t)?;
    let pi = optimal_allocation(&model.market, &model.prefs, dual.psi(t, z), t, z, y_star)?;
    Ok((rho * c, rho * pi, rho * p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialFraction {
    pub rho0: f64,
    /// `rho0 Y*(0) + P(0; rho0) - g(0) - x0`.
    pub gap: f64,
    /// `P(0; rho0)` under the exercise rule fitted last.
    pub price0: f64,
    pub price_se: f64,
    /// Exercise-rule refits before the fraction settled.
    pub refits: usize,
    /// Change of the fraction at the last refit.
    pub last_shift: f64,
}

/// Smallest fraction tried by the bisection.
pub const RHO_MIN: f64 = 1e-6;

const MAX_REFITS: usize = 8;

/// Bisection on `rho Y*(0) + P(0; rho) - g(0) - x0` with the exercise rule frozen.
fn bisect_budget(
    paths: &PutPaths<'_>,
    flags: &ExerciseFlags,
    x0: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let y0 = paths.y_star(0, 0);
    let g0 = paths.human_capital[0];
    let gap = |rho: f64| rho * y0 + paths.price_with_policy(flags, rho).mean - g0 - x0;
    let g_hi = gap(1.0);
    if g_hi.abs() <= tol {
        return Ok((1.0, g_hi));
    }
    let g_lo = gap(RHO_MIN);
    if g_hi < 0.0 || g_lo > 0.0 {
        return Err(Error::InfeasibleGuarantee {
            rho_low: RHO_MIN,
            gap_low: g_lo,
            gap_high: g_hi,
        });
    }
    let (mut lo, mut hi) = (RHO_MIN, 1.0);
    let mut best = (1.0, g_hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g = gap(mid);
        if g.abs() < best.1.abs() {
            best = (mid, g);
        }
        if g.abs() <= tol || hi - lo <= f64::EPSILON * hi {
            break;
        }
        if g < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Solves the budget equation `rho Y*(0) + P(0; rho) - g(0) = x0`.
///
/// The Longstaff-Schwartz price jumps whenever a path changes its exercise
/// decision, so the equation is solved with the exercise rule held fixed,
/// where the price is continuous in `rho`, and the rule is refitted at the new
/// fraction until the fraction settles. Returns the fraction and the quote
/// whose rule it was solved with.
pub fn solve_initial_fraction(
    paths: &PutPaths<'_>,
    x0: f64,
    tol: f64,
) -> Result<(InitialFraction, PutQuote)> {
    if !(x0 > 0.0) {
        return Err(Error::invalid("initial wealth must be positive"));
    }
    let y0 = paths.y_star(0, 0);
    let mut rho = 1.0;
    let mut refits = 0;
    loop {
        let mut quote = paths.lsm(rho);
        refits += 1;
        let (next, gap) = bisect_budget(paths, &quote.exercise, x0, tol)?;
        let shift = (next - rho).abs();
        if shift <= tol / y0 || refits == MAX_REFITS {
            let frozen = paths.price_with_policy(&quote.exercise, next);
            quote.valuation.price0 = frozen.mean;
            quote.valuation.std_error0 = frozen.std_error;
            return Ok((
                InitialFraction {
                    rho0: next,
                    gap,
                    price0: frozen.mean,
                    price_se: frozen.std_error,
                    refits,
                    last_shift: shift,
                },
                quote,
            ));
        }
        rho = next;
    }
}

/// Everything the restricted run needs, fitted once at `rho0`.
pub struct ObpiPlan<'p, 'a> {
    pub paths: &'p PutPaths<'a>,
    pub x0: f64,
    pub initial: InitialFraction,
    pub quote: PutQuote,
    /// Floor tolerance per exercise date.
    pub tol: Vec<f64>,
}

/// Rounding allowance added to every floor tolerance, relative to the strike.
const ROUNDING: f64 = 1e-10;

impl<'p, 'a> ObpiPlan<'p, 'a> {
    pub fn build(paths: &'p PutPaths<'a>, x0: f64, bisection_tol: f64) -> Result<Self> {
        let (initial, quote) = solve_initial_fraction(paths, x0, bisection_tol)?;
        let np = paths.n_paths();
        let tol = (0..paths.n_dates())
            .map(|j| {
                let scale = paths.strike(j, paths.d_income[j]).abs().max(1.0);
                3.0 * quote.valuation.node_error(j, np) + ROUNDING * scale
            })
            .collect();
        Ok(ObpiPlan {
            paths,
            x0,
            initial,
            quote,
            tol,
        })
    }

    pub fn valuation(&self) -> &PutValuation {
        &self.quote.valuation
    }

    pub fn boundary(&self) -> &BoundaryEstimate {
        &self.quote.boundary
    }

    /// Insured wealth `rho Y* + P - g` at time zero.
    pub fn x_hat0(&self) -> f64 {
        let p = self.paths;
        let rho = self.initial.rho0;
        let x = p.state(0, 0, rho);
        rho * p.y_star(0, 0) + self.valuation().value(p, 0, x) - p.human_capital[0]
    }
}

/// Restricted strategy along one path, on the exercise dates.
#[derive(Debug, Clone, Default)]
pub struct RestrictedPath {
    pub path_id: u64,
    pub t: Vec<f64>,
    pub y_star: Vec<f64>,
    pub d: Vec<f64>,
    pub rho: Vec<f64>,
    pub put_value: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub k_floor: Vec<f64>,
    pub c_hat: Vec<f64>,
    pub pi_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub violation: Vec<bool>,
    pub events: Vec<RatchetEvent>,
}

/// Knobs for [`admissibility_check`] and [`obpi_wealth`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// Subtracted from every fitted put value; a negative control for the floor check.
    pub put_bias: f64,
}

struct Walked {
    violations: u32,
    min_slack: f64,
    martingale: f64,
    events: usize,
    max_rho: f64,
    failed_nodes: u32,
}

fn walk_path(
    plan: &ObpiPlan<'_, '_>,
    k: usize,
    opts: RunOptions,
    record: Option<&mut RestrictedPath>,
) -> Result<Walked> {
    let p = plan.paths;
    let m = p.n_dates();
    let boundary = plan.boundary();
    let mut state = RatchetState::new(plan.initial.rho0)?;
    let mut d = 0.0;
    let mut paid = 0.0;
    let mut out = Walked {
        violations: 0,
        min_slack: f64::INFINITY,
        martingale: 0.0,
        events: 0,
        max_rho: state.rho,
        failed_nodes: 0,
    };
    let mut rec = record;
    for j in 0..m {
        let y = p.y_star(j, k);
        let t = p.times[j];
        if j > 0 {
            if p.uses_d {
                let dc = p.consumption_accrual(j, k) - p.consumption_accrual(j - 1, k);
                d += p.d_income[j] - p.d_income[j - 1] - state.rho * dc;
            }
            paid += state.rho * (p.paid(j, k) - p.paid(j - 1, k));
            ratchet_fraction(&mut state, t, boundary.lookup(t, d), y)?;
        }
        let rho = state.rho;
        let x = [rho * y, d, if p.uses_z { p.z_at(j, k) } else { 0.0 }];
        let put = plan.valuation().value(p, j, x) - opts.put_bias;
        let g = p.human_capital[j];
        let x_hat = rho * y + put - g;
        let floor = p.strike(j, d) - g;
        let slack = x_hat - floor;
        let violation = slack < -plan.tol[j];
        out.violations += violation as u32;
        out.min_slack = out.min_slack.min(slack);
        if !x_hat.is_finite() {
            out.failed_nodes += 1;
        }
        if let Some(r) = rec.as_deref_mut() {
            r.t.push(t);
            r.y_star.push(y);
            r.d.push(d);
            r.rho.push(rho);
            r.put_value.push(put);
            r.x_hat.push(x_hat);
            r.k_floor.push(floor);
            r.violation.push(violation);
        }
        if j == m - 1 {
            out.martingale = p.discount[j] * x_hat + paid
                - p.engine.tables.cum_disc_income[p.engine.tables.grid.n_steps];
        }
    }
    out.events = state.events.len();
    out.max_rho = state.rho;
    if let Some(r) = rec {
        r.events = state.events;
    }
    Ok(out)
}

/// Restricted paths with strategies for the listed path indices.
pub fn obpi_wealth(
    plan: &ObpiPlan<'_, '_>,
    path_ids: &[usize],
    opts: RunOptions,
) -> Result<Vec<RestrictedPath>> {
    let p = plan.paths;
    let engine = p.engine;
    let res = map_indices(path_ids.len(), |i| -> Result<RestrictedPath> {
        let k = path_ids[i];
        let mut r = RestrictedPath {
            path_id: k as u64,
            ..RestrictedPath::default()
        };
        walk_path(plan, k, opts, Some(&mut r))?;
        for j in 0..r.t.len() {
            let (c, pi, pp) = restricted_strategy(
                engine.model,
                engine.dual,
                r.rho[j],
                r.y_star[j],
                r.t[j],
                p.z_at(j, k),
            )
            .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
            r.c_hat.push(c);
            r.pi_hat.push(pi);
            r.p_hat.push(pp);
        }
        Ok(r)
    });
    res.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub n_paths: usize,
    pub nodes: usize,
    pub violations: u64,
    pub violating_paths: usize,
    /// Violations per path.
    pub per_path: Vec<u32>,
    /// Smallest `X^ - k` over all nodes.
    pub min_slack: f64,
    pub x_hat0: f64,
    pub rho0: f64,
    pub max_rho: f64,
    pub ratchet_events: u64,
    pub failed_nodes: u64,
    /// `e^{-int(r+mu)} X^(T) + int e^{-int(r+mu)}(c^ + mu p^ - ell)`; mean should be `x0`.
    pub martingale: McEstimate,
    pub martingale_target: f64,
    /// Error allowance of the fitted time-zero put value.
    pub martingale_budget: f64,
}

impl AdmissibilityReport {
    pub fn floor_holds(&self) -> bool {
        self.violations == 0 && self.failed_nodes == 0
    }

    pub fn martingale_gap(&self) -> f64 {
        (self.martingale.mean - self.martingale_target).abs()
    }

    pub fn martingale_holds(&self) -> bool {
        self.martingale_gap() <= 3.0 * self.martingale.std_error + self.martingale_budget
    }
}

/// Floor and budget checks over every simulated path.
pub fn admissibility_check(
    plan: &ObpiPlan<'_, '_>,
    opts: RunOptions,
) -> Result<AdmissibilityReport> {
    let p = plan.paths;
    let np = p.n_paths();
    let res = map_indices(np, |k| walk_path(plan, k, opts, None));
    let mut per_path = vec![0u32; np];
    let mut samples = Vec::with_capacity(np);
    let mut min_slack = f64::INFINITY;
    let mut max_rho: f64 = plan.initial.rho0;
    let (mut events, mut failed) = (0u64, 0u64);
    for (k, r) in res.into_iter().enumerate() {
        let w = r?;
        per_path[k] = w.violations;
        samples.push(w.martingale);
        min_slack = min_slack.min(w.min_slack);
        max_rho = max_rho.max(w.max_rho);
        events += w.events as u64;
        failed += w.failed_nodes as u64;
    }
    Ok(AdmissibilityReport {
        n_paths: np,
        nodes: np * p.n_dates(),
        violations: per_path.iter().map(|&v| v as u64).sum(),
        violating_paths: per_path.iter().filter(|&&v| v > 0).count(),
        per_path,
        min_slack,
        x_hat0: plan.x_hat0(),
        rho0: plan.initial.rho0,
        max_rho,
        ratchet_events: events,
        failed_nodes: failed,
        martingale: McEstimate::from_samples(&samples),
        martingale_target: plan.x0,
        martingale_budget: 3.0 * plan.initial.price_se,
    })
}
