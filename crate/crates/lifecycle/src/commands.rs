//! Pipeline stages. Each stage reads its inputs from the output directory,
//! so `simulate`, `price-put` and `obpi` need `solve` to have run first.

use std::path::Path;

use anyhow::{Context as _, Result};
use lifecycle_core::dual::{solve_pde, DualGrid, DualSolution};
use lifecycle_core::market::{validate_params, Measure, ValidationDomain};
use lifecycle_core::obpi::{admissibility_check, obpi_wealth, ObpiPlan, RunOptions};
use lifecycle_core::put::{PutPaths, PutQuote};
use lifecycle_core::strategy::{WealthEngine, WealthReport};
use serde::{Deserialize, Serialize};

use crate::artifact::{csv_bytes, json_bytes, OutDir};
use crate::config::{self, Loaded, Overrides};

pub const DUAL_GRID: &str = "dual_grid.csv";
pub const PUT_QUOTE: &str = "put_quote.csv";

/// A loaded configuration and the output directory it writes to.
pub struct Context {
    pub loaded: Loaded,
    pub out: OutDir,
}

impl Context {
    pub fn open(config: &Path, out: &Path, overrides: Overrides) -> Result<Self> {
        let loaded = config::load(config, overrides)?;
        let out = OutDir::new(out, loaded.hash.clone());
        Ok(Context { loaded, out })
    }

    pub fn from_loaded(loaded: Loaded, out: &Path) -> Self {
        let out = OutDir::new(out, loaded.hash.clone());
        Context { loaded, out }
    }

    /// The dual grid written by `solve`.
    pub fn dual_grid(&self) -> Result<DualGrid> {
        let bytes = self.out.read(DUAL_GRID, "solve")?;
        parse_dual_grid(&bytes, &self.loaded).with_context(|| format!("reading {DUAL_GRID}"))
    }

    pub fn engine<'a>(&'a self, dual: &'a DualGrid, measure: Measure) -> Result<WealthEngine<'a>> {
        Ok(WealthEngine::new(
            &self.loaded.model,
            dual,
            self.loaded.time_grid()?,
            measure,
        )?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualRow {
    pub t: f64,
    pub z: f64,
    pub h: f64,
    pub psi_hat: f64,
}

pub fn dual_grid_csv(g: &DualGrid) -> Vec<u8> {
    let nz = g.n_z();
    csv_bytes((0..g.n_t() * nz).map(|k| DualRow {
        t: g.ts[k / nz],
        z: g.zs[k % nz],
        h: g.h[k],
        psi_hat: g.psi_hat[k],
    }))
}

fn parse_dual_grid(bytes: &[u8], loaded: &Loaded) -> Result<DualGrid> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let rows: Vec<DualRow> = rdr.deserialize().collect::<Result<_, _>>()?;
    anyhow::ensure!(!rows.is_empty(), "empty dual grid");
    let t0 = rows[0].t;
    let zs: Vec<f64> = rows.iter().take_while(|r| r.t == t0).map(|r| r.z).collect();
    let nz = zs.len();
    anyhow::ensure!(
        rows.len() % nz == 0,
        "dual grid rows do not form a full grid"
    );
    let ts: Vec<f64> = rows.iter().step_by(nz).map(|r| r.t).collect();
    for (k, r) in rows.iter().enumerate() {
        anyhow::ensure!(
            r.t == ts[k / nz] && r.z == zs[k % nz],
            "dual grid row {} is out of order",
            k + 2
        );
    }
    Ok(DualGrid::from_tables(
        ts,
        zs,
        rows.iter().map(|r| r.h).collect(),
        rows.iter().map(|r| r.psi_hat).collect(),
        loaded.psi_bounds()?,
        loaded.model.market.is_z_free(),
    )?)
}

#[derive(Debug, Clone, Serialize)]
pub struct ViolationRow {
    pub kind: String,
    pub t: f64,
    pub z: f64,
    pub value: f64,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateReport {
    pub config_hash: String,
    pub status: String,
    pub violations: Vec<ViolationRow>,
}

impl ValidateReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate(ctx: &Context) -> Result<ValidateReport> {
    let l = &ctx.loaded;
    let m = &l.model;
    let grid = l.time_grid()?;
    let domain = ValidationDomain::around(m.market.z0, m.horizon());
    let mut violations: Vec<ViolationRow> =
        validate_params(&m.market, &m.mortality, &grid, &domain)
            .into_iter()
            .map(|v| ViolationRow {
                kind: v.kind.describe().into(),
                t: v.t,
                z: v.z,
                value: v.value,
                message: v.message(),
            })
            .collect();
    let mut extra = |kind: &str, e: String| {
        violations.push(ViolationRow {
            kind: kind.into(),
            t: 0.0,
            z: m.market.z0,
            value: f64::NAN,
            message: e,
        })
    };
    if let Err(e) = l.psi_bounds() {
        extra("psi bounds", e.to_string());
    }
    if let Err(e) = l.guarantee.check(m, grid.n_steps) {
        extra("guarantee", e.to_string());
    }
    let report = ValidateReport {
        config_hash: l.hash.clone(),
        status: if violations.is_empty() {
            "ok"
        } else {
            "violations"
        }
        .into(),
        violations,
    };
    ctx.out
        .write("validate.json", &json_bytes(&report), "validate")?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct Convergence {
    pub annuity_half: f64,
    pub annuity: f64,
    pub annuity_double: f64,
    /// `|V(half) - V(full)| / |V(full) - V(double)|`, near 4 for a second-order scheme.
    pub richardson_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub config_hash: String,
    pub n_t: usize,
    pub n_z: usize,
    pub z_min: f64,
    pub z_max: f64,
    pub h0: f64,
    pub annuity0: f64,
    pub zeta_hat: f64,
    pub dual_value: f64,
    pub y0: f64,
    pub g0: f64,
    pub boundary_hits: usize,
    pub upwind_nodes: usize,
    pub convergence: Convergence,
}

pub fn solve(ctx: &Context) -> Result<SolveSummary> {
    let l = &ctx.loaded;
    let m = &l.model;
    let grid = l.pde_grid();
    let bounds = l.psi_bounds()?;
    let z0 = m.market.z0;
    let sol = DualSolution::solve(m, grid, bounds).context("solving the dual PDE")?;
    let half = solve_pde(m, grid.halved(), bounds)?.annuity(0.0, z0);
    let double = solve_pde(m, grid.doubled(), bounds)?.annuity(0.0, z0);
    let full = sol.annuity0();
    let summary = SolveSummary {
        config_hash: l.hash.clone(),
        n_t: grid.n_t,
        n_z: grid.n_z,
        z_min: grid.z_min,
        z_max: grid.z_max,
        h0: sol.grid.h_at(0.0, z0),
        annuity0: full,
        zeta_hat: sol.zeta_hat,
        dual_value: sol.dual_value,
        y0: sol.y0,
        g0: sol.g0,
        boundary_hits: sol.grid.boundary_hits,
        upwind_nodes: sol.grid.upwind_nodes,
        convergence: Convergence {
            annuity_half: half,
            annuity: full,
            annuity_double: double,
            richardson_ratio: (half - full).abs() / (full - double).abs(),
        },
    };
    ctx.out
        .write(DUAL_GRID, &dual_grid_csv(&sol.grid), "solve")?;
    ctx.out
        .write("solve.json", &json_bytes(&summary), "solve")?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
struct PathRow {
    path_id: u64,
    t: f64,
    #[serde(rename = "Z")]
    z: f64,
    #[serde(rename = "S")]
    s: f64,
    #[serde(rename = "Y*")]
    y: f64,
    #[serde(rename = "X*")]
    x: f64,
    #[serde(rename = "c*")]
    c: f64,
    #[serde(rename = "p*")]
    p: f64,
    #[serde(rename = "pi*")]
    pi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WealthSummary {
    pub measure: String,
    pub n_paths: usize,
    pub y0: f64,
    pub income_pv: f64,
    pub budget_mean: f64,
    pub budget_se: f64,
    pub martingale_mean: f64,
    pub primal_mean: f64,
    pub primal_se: f64,
    pub min_consumption: f64,
    pub c_equals_p: bool,
    pub c0: f64,
    pub pi0: f64,
}

impl WealthSummary {
    pub fn new(r: &WealthReport) -> Self {
        WealthSummary {
            measure: format!("{:?}", r.measure),
            n_paths: r.budget.n,
            y0: r.y0,
            income_pv: r.income_pv,
            budget_mean: r.budget.mean,
            budget_se: r.budget.std_error,
            martingale_mean: r.martingale_mean(),
            primal_mean: r.primal.mean,
            primal_se: r.primal.std_error,
            min_consumption: r.min_consumption,
            c_equals_p: r.c_equals_p,
            c0: r.c0,
            pi0: r.pi0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub config_hash: String,
    pub steps: usize,
    pub seed: u64,
    pub dual_value: f64,
    pub pricing: WealthSummary,
    pub physical: WealthSummary,
}

pub fn simulate(ctx: &Context) -> Result<SimulateSummary> {
    let l = &ctx.loaded;
    let dual = ctx.dual_grid()?;
    let mc = &l.config.mc;
    let sol = DualSolution::new(&l.model, dual.clone())?;
    let eq = ctx.engine(&dual, Measure::Q)?;
    let ep = ctx.engine(&dual, Measure::P)?;
    let rq = eq.run(mc.paths, mc.seed)?;
    let rp = ep.run(mc.paths, mc.seed)?;
    let mut rows = Vec::new();
    for k in 0..l.config.output.export_paths.min(mc.paths) as u64 {
        let p = ep.path(mc.seed, k)?;
        for i in 0..p.t.len() {
            rows.push(PathRow {
                path_id: k,
                t: p.t[i],
                z: p.z[i],
                s: p.s[i],
                y: p.y[i],
                x: p.x[i],
                c: p.c[i],
                p: p.p[i],
                pi: p.pi[i],
            });
        }
    }
    let summary = SimulateSummary {
        config_hash: l.hash.clone(),
        steps: mc.steps,
        seed: mc.seed,
        dual_value: sol.dual_value,
        pricing: WealthSummary::new(&rq),
        physical: WealthSummary::new(&rp),
    };
    ctx.out.write("paths.csv", &csv_bytes(rows), "simulate")?;
    ctx.out
        .write("simulate.json", &json_bytes(&summary), "simulate")?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuoteRow {
    pub rho: f64,
    pub price: f64,
    pub std_error: f64,
    pub european: f64,
    pub european_se: f64,
    pub intrinsic0: f64,
    pub degree_reductions: usize,
}

impl QuoteRow {
    pub fn new(q: &PutQuote) -> Self {
        QuoteRow {
            rho: q.rho,
            price: q.price,
            std_error: q.std_error,
            european: q.european,
            european_se: q.european_se,
            intrinsic0: q.intrinsic0,
            degree_reductions: q.degree_reductions,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct BoundaryRow {
    t: f64,
    bin: usize,
    d_lo: f64,
    d_hi: f64,
    strike_max: f64,
    b: Option<f64>,
}

/// Fractions of `Y*` quoted by `price-put`, relative to the configured one.
pub const QUOTE_SCALES: [f64; 3] = [0.9, 1.0, 1.1];

pub fn put_paths<'a>(ctx: &Context, engine: &'a WealthEngine<'a>) -> Result<PutPaths<'a>> {
    Ok(PutPaths::simulate(
        engine,
        ctx.loaded.guarantee.clone(),
        ctx.loaded.put_config(),
    )?)
}

pub fn price_put(ctx: &Context) -> Result<Vec<QuoteRow>> {
    let l = &ctx.loaded;
    let dual = ctx.dual_grid()?;
    let engine = ctx.engine(&dual, Measure::Q)?;
    let paths = put_paths(ctx, &engine)?;
    let quotes: Vec<PutQuote> = QUOTE_SCALES
        .iter()
        .map(|s| paths.lsm(s * l.config.put.rho))
        .collect();
    let b = &quotes[1].boundary;
    let rows: Vec<BoundaryRow> = (0..b.times.len() * b.d_bins)
        .map(|k| {
            let j = k / b.d_bins;
            BoundaryRow {
                t: b.times[j],
                bin: k % b.d_bins,
                d_lo: b.d_lo[j],
                d_hi: b.d_hi[j],
                strike_max: b.strike_max[k],
                b: b.b[k],
            }
        })
        .collect();
    let out: Vec<QuoteRow> = quotes.iter().map(QuoteRow::new).collect();
    ctx.out
        .write(PUT_QUOTE, &csv_bytes(out.iter()), "price-put")?;
    ctx.out
        .write("put_boundary.csv", &csv_bytes(rows), "price-put")?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
struct RestrictedRow {
    path_id: u64,
    t: f64,
    #[serde(rename = "Y*")]
    y: f64,
    rho: f64,
    put_value: f64,
    #[serde(rename = "X_hat")]
    x_hat: f64,
    k_floor: f64,
    c_hat: f64,
    pi_hat: f64,
    p_hat: f64,
    violation_flag: u8,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObpiSummary {
    pub config_hash: String,
    pub rho0: f64,
    pub x_hat0: f64,
    pub x0: f64,
    pub put_price0: f64,
    pub put_price_se: f64,
    pub refits: usize,
    pub n_paths: usize,
    pub nodes: usize,
    pub violations: u64,
    pub violating_paths: usize,
    pub failed_nodes: u64,
    pub min_slack: f64,
    pub max_rho: f64,
    pub ratchet_events: u64,
    pub martingale_mean: f64,
    pub martingale_se: f64,
    pub martingale_target: f64,
    pub martingale_budget: f64,
    pub martingale_holds: bool,
}

pub fn obpi(ctx: &Context) -> Result<ObpiSummary> {
    let l = &ctx.loaded;
    ctx.out.read(PUT_QUOTE, "price-put")?;
    let dual = ctx.dual_grid()?;
    let engine = ctx.engine(&dual, Measure::Q)?;
    let paths = put_paths(ctx, &engine)?;
    let x0 = l.model.market.x0;
    let plan = ObpiPlan::build(&paths, x0, l.config.put.bisection_tol)?;
    let rep = admissibility_check(&plan, RunOptions::default())?;
    let ids: Vec<usize> = (0..l.config.output.export_paths.min(paths.n_paths())).collect();
    let mut rows = Vec::new();
    for r in obpi_wealth(&plan, &ids, RunOptions::default())? {
        for j in 0..r.t.len() {
            rows.push(RestrictedRow {
                path_id: r.path_id,
                t: r.t[j],
                y: r.y_star[j],
                rho: r.rho[j],
                put_value: r.put_value[j],
                x_hat: r.x_hat[j],
                k_floor: r.k_floor[j],
                c_hat: r.c_hat[j],
                pi_hat: r.pi_hat[j],
                p_hat: r.p_hat[j],
                violation_flag: r.violation[j] as u8,
            });
        }
    }
    let summary = ObpiSummary {
        config_hash: l.hash.clone(),
        rho0: plan.initial.rho0,
        x_hat0: plan.x_hat0(),
        x0,
        put_price0: plan.initial.price0,
        put_price_se: plan.initial.price_se,
        refits: plan.initial.refits,
        n_paths: rep.n_paths,
        nodes: rep.nodes,
        violations: rep.violations,
        violating_paths: rep.violating_paths,
        failed_nodes: rep.failed_nodes,
        min_slack: rep.min_slack,
        max_rho: rep.max_rho,
        ratchet_events: rep.ratchet_events,
        martingale_mean: rep.martingale.mean,
        martingale_se: rep.martingale.std_error,
        martingale_target: rep.martingale_target,
        martingale_budget: rep.martingale_budget,
        martingale_holds: rep.martingale_holds(),
    };
    ctx.out.write("restricted.csv", &csv_bytes(rows), "obpi")?;
    ctx.out.write("obpi.json", &json_bytes(&summary), "obpi")?;
    Ok(summary)
}
