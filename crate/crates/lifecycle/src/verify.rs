//! The acceptance suite behind `lifecycle verify`.
//!
//! The report holds one row per check and nothing that depends on wall
//! time, so two runs with the same configuration give identical bytes.
//! Timings go to a separate `timings.json` that is not in the manifest.

use std::time::Instant;

use anyhow::Result;
use lifecycle_core::coef::Coef;
use lifecycle_core::dual::{cross_check, solve_pde, DualGrid, DualSolution, PdeGrid};
use lifecycle_core::market::{simulate_factor, DriftMode, Measure, Model, PsiPolicy};
use lifecycle_core::math::McEstimate;
use lifecycle_core::measure::radon_nikodym_path;
use lifecycle_core::obpi::{admissibility_check, ObpiPlan, RunOptions};
use lifecycle_core::put::{PutConfig, PutPaths};
use lifecycle_core::strategy::WealthEngine;
use rayon::prelude::*;
use serde::Serialize;

use crate::artifact::{csv_bytes, json_bytes, write_atomic, ArtifactError};
use crate::commands::{dual_grid_csv, put_paths, Context, DUAL_GRID, QUOTE_SCALES};
use crate::oracle::{annuity_rk4, freeze_factor, scale_time_fn};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const TIMINGS: &str = "timings.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub status: String,
    pub statistic: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckRow {
    fn new(check: &str, pass: bool, statistic: f64, tolerance: f64, detail: String) -> Self {
        CheckRow {
            check: check.into(),
            status: if pass { "pass" } else { "fail" }.into(),
            statistic,
            tolerance,
            detail,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == "pass"
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config_hash: String,
    pub checks: Vec<CheckRow>,
}

impl RunReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(CheckRow::passed)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub check: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timings {
    pub threads: usize,
    pub total_seconds: f64,
    pub checks: Vec<Timing>,
}

pub const CHECKS: [&str; 11] = [
    "girsanov_martingale",
    "no_jump_degeneracy",
    "pde_mc_cross_oracle",
    "ode_reduction",
    "budget_constraint",
    "wealth_martingale",
    "consumption_premium_homogeneity",
    "american_put_sanity",
    "obpi_floor",
    "duality_gap",
    "determinism",
];

/// Paths compared node by node in the homogeneity check.
const HOMOGENEITY_PATHS: u64 = 200;
/// Paths in the deterministic-market put oracle (all identical).
const ORACLE_PATHS: usize = 64;
/// Paths re-simulated twice in the determinism check.
const REPEAT_PATHS: usize = 2_000;

pub fn verify(ctx: &Context) -> Result<(RunReport, Timings)> {
    // every artifact on disk must come from this configuration
    let manifest = ctx.out.manifest()?;
    for (file, entry) in &manifest.files {
        if entry.config_hash != ctx.out.config_hash {
            return Err(ArtifactError::ConfigMismatch {
                file: file.clone(),
                expected: ctx.out.config_hash.clone(),
                found: entry.config_hash.clone(),
                command: "solve",
            }
            .into());
        }
    }
    let dual = ctx.dual_grid()?;
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut times = Vec::new();
    let mut timed = |name: &str, f: &mut dyn FnMut() -> Result<Vec<CheckRow>>| -> Result<()> {
        let t = Instant::now();
        let out = f()?;
        times.push(Timing {
            check: name.into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        rows.extend(out);
        Ok(())
    };
    timed(CHECKS[0], &mut || Ok(vec![girsanov(ctx, &dual)?]))?;
    timed(CHECKS[1], &mut || Ok(vec![no_jump(ctx)?]))?;
    timed(CHECKS[2], &mut || Ok(vec![cross_oracle(ctx)?]))?;
    timed(CHECKS[3], &mut || Ok(vec![ode_reduction(ctx)?]))?;
    timed("budget_martingale_homogeneity", &mut || {
        unrestricted(ctx, &dual)
    })?;
    timed("put_and_obpi", &mut || put_and_obpi(ctx, &dual))?;
    timed(CHECKS[9], &mut || Ok(vec![duality_gap(ctx, &dual)?]))?;
    timed(CHECKS[10], &mut || Ok(vec![determinism(ctx, &dual)?]))?;
    rows.sort_by_key(|r| CHECKS.iter().position(|c| *c == r.check));
    let report = RunReport {
        config_hash: ctx.out.config_hash.clone(),
        checks: rows,
    };
    let timings = Timings {
        threads: rayon::current_num_threads(),
        total_seconds: start.elapsed().as_secs_f64(),
        checks: times,
    };
    ctx.out.write(REPORT_JSON, &json_bytes(&report), "verify")?;
    ctx.out
        .write(REPORT_CSV, &csv_bytes(report.checks.iter()), "verify")?;
    write_atomic(&ctx.out.path(TIMINGS), &json_bytes(&timings))?;
    Ok((report, timings))
}

/// `E[Lambda(T)] = 1` under `P` with the computed jump measure.
fn girsanov(ctx: &Context, dual: &DualGrid) -> Result<CheckRow> {
    let l = &ctx.loaded;
    let p = &l.model.market;
    let grid = l.time_grid()?;
    let mc = &l.config.mc;
    let samples = (0..mc.paths as u64)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let b = simulate_factor(p, &grid, mc.seed, k, DriftMode::P)?;
            let psi: Vec<f64> = (0..grid.n_steps)
                .map(|i| dual.psi(grid.t(i), b.z[i]))
                .collect();
            Ok(*radon_nikodym_path(p, &b, &psi)?
                .last()
                .expect("nonempty path"))
        })
        .collect::<Result<Vec<_>>>()?;
    let e = McEstimate::from_samples(&samples);
    let z = e.z_score(1.0).abs();
    Ok(CheckRow::new(
        CHECKS[0],
        z <= 3.0,
        z,
        3.0,
        format!("mean {} se {} paths {}", e.mean, e.std_error, e.n),
    ))
}

/// With no jump loading the optimal jump measure is the physical one.
fn no_jump(ctx: &Context) -> Result<CheckRow> {
    let l = &ctx.loaded;
    let mut m = l.model.clone();
    m.market.gamma = Coef::Constant(0.0);
    let g = solve_pde(&m, l.pde_grid(), l.psi_bounds()?)?;
    let worst = g
        .psi_hat
        .iter()
        .map(|p| (p - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(CheckRow::new(
        CHECKS[1],
        worst <= 1e-8,
        worst,
        1e-8,
        format!("max |psi_hat - 1| over {} nodes", g.psi_hat.len()),
    ))
}

/// PDE annuity against Monte Carlo, and the budget when grids double.
fn cross_oracle(ctx: &Context) -> Result<CheckRow> {
    let l = &ctx.loaded;
    let m = &l.model;
    let mc = &l.config.mc;
    let bounds = l.psi_bounds()?;
    let steps = mc.steps + mc.steps % 2;
    let base = cross_check(m, l.pde_grid(), bounds, mc.paths, steps, mc.seed)?;
    let fine = cross_check(
        m,
        l.pde_grid().doubled(),
        bounds,
        mc.paths,
        2 * steps,
        mc.seed,
    )?;
    let tol = 3.0 * base.mc.fine.std_error + base.budget;
    let shrink = base.budget / fine.budget;
    Ok(CheckRow::new(
        CHECKS[2],
        base.passes() && fine.passes() && shrink >= 1.8,
        base.gap(),
        tol,
        format!(
            "pde {} mc {} se {} budget {}; doubled grids: gap {} budget {} shrink {} (need >= 1.8)",
            base.v_pde,
            base.mc.fine.mean,
            base.mc.fine.std_error,
            base.budget,
            fine.gap(),
            fine.budget,
            shrink
        ),
    ))
}

/// Factor-free variant of the model against an RK4 solution of the annuity ODE.
fn ode_reduction(ctx: &Context) -> Result<CheckRow> {
    let l = &ctx.loaded;
    let n_t = l.config.pde.n_t;
    let m = freeze_factor(&l.model, n_t);
    let bounds = l.psi_bounds()?;
    let g = solve_pde(&m, PdeGrid::around(&m, n_t, 21), bounds)?;
    let pde = g.annuity(0.0, m.market.z0);
    let ode = annuity_rk4(&m, bounds, 20 * n_t);
    let rel = (pde / ode - 1.0).abs();
    let row0 = &g.h[..g.n_z()];
    let spread = row0.iter().map(|h| (h - row0[0]).abs()).fold(0.0, f64::max);
    Ok(CheckRow::new(
        CHECKS[3],
        rel <= 1e-4 && spread <= 1e-12,
        rel,
        1e-4,
        format!("pde {pde} rk4 {ode}; spread of h(0, .) across z {spread}"),
    ))
}

/// Budget, martingale, `c* = p*` and homogeneity, from one pricing-measure run.
fn unrestricted(ctx: &Context, dual: &DualGrid) -> Result<Vec<CheckRow>> {
    let l = &ctx.loaded;
    let mc = &l.config.mc;
    let x0 = l.model.market.x0;
    let eq = ctx.engine(dual, Measure::Q)?;
    let r = eq.run(mc.paths, mc.seed)?;
    let se = r.budget.std_error;
    let budget_gap = (r.budget.mean - r.y0).abs();
    let mart_gap = (r.martingale_mean() - x0).abs();

    // doubling wealth and income doubles y0 and leaves the dual untouched
    let mut big = l.model.clone();
    big.market.x0 *= 2.0;
    big.income.ell = scale_time_fn(&big.income.ell, 2.0);
    let ep = ctx.engine(dual, Measure::P)?;
    let eb = WealthEngine::new(&big, dual, l.time_grid()?, Measure::P)?;
    let mut worst = 0.0f64;
    let mut c_eq_p = r.c_equals_p && r.min_consumption > 0.0;
    for k in 0..HOMOGENEITY_PATHS.min(mc.paths as u64) {
        let a = ep.path(mc.seed, k)?;
        let b = eb.path(mc.seed, k)?;
        for i in 0..a.t.len() {
            c_eq_p &= a.c[i].to_bits() == a.p[i].to_bits() && a.c[i] > 0.0;
            for (u, v) in [(a.y[i], b.y[i]), (a.c[i], b.c[i]), (a.pi[i], b.pi[i])] {
                let dev = if u == 0.0 {
                    v.abs()
                } else {
                    (v / (2.0 * u) - 1.0).abs()
                };
                worst = worst.max(dev);
            }
        }
    }
    Ok(vec![
        CheckRow::new(
            CHECKS[4],
            budget_gap <= 3.0 * se,
            budget_gap,
            3.0 * se,
            format!("budget mean {} y0 {} se {} paths {}", r.budget.mean, r.y0, se, r.budget.n),
        ),
        CheckRow::new(
            CHECKS[5],
            mart_gap <= 3.0 * se,
            mart_gap,
            3.0 * se,
            format!("discounted wealth mean {} x0 {x0}", r.martingale_mean()),
        ),
        CheckRow::new(
            CHECKS[6],
            c_eq_p && worst <= 1e-12,
            worst,
            1e-12,
            format!(
                "c* == p* bitwise and positive: {c_eq_p} (min c* {}); max relative deviation of 2x(c*, pi*, Y*) over {HOMOGENEITY_PATHS} paths",
                r.min_consumption
            ),
        ),
    ])
}

/// Put bounds and monotonicity, the deterministic-market oracle, and the OBPI floor.
fn put_and_obpi(ctx: &Context, dual: &DualGrid) -> Result<Vec<CheckRow>> {
    let l = &ctx.loaded;
    let engine = ctx.engine(dual, Measure::Q)?;
    let paths = put_paths(ctx, &engine)?;
    let quotes: Vec<_> = QUOTE_SCALES
        .iter()
        .map(|s| paths.lsm(s * l.config.put.rho))
        .collect();
    let mut worst_bound = f64::INFINITY;
    for q in &quotes {
        worst_bound = worst_bound
            .min(q.price - q.intrinsic0 + 3.0 * q.std_error)
            .min(q.price - q.european + 3.0 * q.std_error + 3.0 * q.european_se);
    }
    let monotone = quotes.windows(2).all(|w| w[0].price >= w[1].price);
    let oracle_err = put_oracle(ctx)?;
    let put_row = CheckRow::new(
        CHECKS[7],
        worst_bound >= 0.0 && monotone && oracle_err <= 1e-8,
        oracle_err,
        1e-8,
        format!(
            "prices {:?} at rho {:?}; min slack to max(intrinsic, european) - 3se {worst_bound}; nonincreasing {monotone}; statistic is the deterministic-market oracle error",
            quotes.iter().map(|q| q.price).collect::<Vec<_>>(),
            quotes.iter().map(|q| q.rho).collect::<Vec<_>>()
        ),
    );

    let x0 = l.model.market.x0;
    let tol = l.config.put.bisection_tol;
    let plan = ObpiPlan::build(&paths, x0, tol)?;
    let rep = admissibility_check(&plan, RunOptions::default())?;
    let x_gap = (plan.x_hat0() - x0).abs();
    let obpi_row = CheckRow::new(
        CHECKS[8],
        rep.floor_holds() && x_gap <= tol,
        rep.violations as f64,
        0.0,
        format!(
            "{} nodes on {} paths, failed nodes {}, min slack {}; |X_hat(0) - x0| {x_gap} (tol {tol}); rho0 {} max rho {}; martingale {} target {} se {} holds {}",
            rep.nodes,
            rep.n_paths,
            rep.failed_nodes,
            rep.min_slack,
            rep.rho0,
            rep.max_rho,
            rep.martingale.mean,
            rep.martingale_target,
            rep.martingale.std_error,
            rep.martingale_holds()
        ),
    );
    Ok(vec![put_row, obpi_row])
}

/// LSM against the exact optimal stopping value when `Y*` is deterministic
/// (no risk premia, no jump loading): the best single exercise date.
fn put_oracle(ctx: &Context) -> Result<f64> {
    let l = &ctx.loaded;
    anyhow::ensure!(
        l.model.market.r.is_constant(),
        "deterministic put oracle needs a constant rate"
    );
    let mut m: Model = l.model.clone();
    m.market.alpha = Coef::Constant(l.model.market.r.eval(0.0));
    m.market.gamma = Coef::Constant(0.0);
    let dual = solve_pde(&m, l.pde_grid(), l.psi_bounds()?)?;
    let engine = WealthEngine::new(&m, &dual, l.time_grid()?, Measure::Q)?;
    let cfg = PutConfig {
        n_paths: ORACLE_PATHS,
        ..l.put_config()
    };
    let paths = PutPaths::simulate(&engine, l.guarantee.clone(), cfg)?;
    let mut worst = 0.0f64;
    for s in [0.3, 0.6, 0.9] {
        let rho = s * l.config.put.rho;
        let mut v = 0.0f64;
        for j in 0..paths.n_dates() {
            let x = paths.state(j, 0, rho);
            v = v.max(paths.discount[j] * (paths.strike(j, x[1]) - x[0]).max(0.0));
        }
        worst = worst.max((paths.lsm(rho).price - v).abs());
    }
    Ok(worst)
}

/// Simulated primal objective against the dual value.
fn duality_gap(ctx: &Context, dual: &DualGrid) -> Result<CheckRow> {
    let l = &ctx.loaded;
    let mc = &l.config.mc;
    let sol = DualSolution::new(&l.model, dual.clone())?;
    let r = ctx.engine(dual, Measure::P)?.run(mc.paths, mc.seed)?;
    let excess = r.primal.mean - sol.dual_value;
    let rel = (r.primal.mean / sol.dual_value - 1.0).abs();
    Ok(CheckRow::new(
        CHECKS[9],
        excess <= 3.0 * r.primal.std_error,
        excess,
        3.0 * r.primal.std_error,
        format!(
            "primal {} se {} dual {}; relative distance {rel} ({} the 2% guard)",
            r.primal.mean,
            r.primal.std_error,
            sol.dual_value,
            if rel <= 0.02 { "within" } else { "OUTSIDE" }
        ),
    ))
}

/// Re-solves the PDE and re-simulates a slice of paths twice; everything
/// must agree to the bit with the stored artifact and with itself.
fn determinism(ctx: &Context, dual: &DualGrid) -> Result<CheckRow> {
    let l = &ctx.loaded;
    let stored = ctx.out.read(DUAL_GRID, "solve")?;
    let again = dual_grid_csv(&solve_pde(&l.model, l.pde_grid(), l.psi_bounds()?)?);
    let same_grid = stored == again;
    let e = ctx.engine(dual, Measure::Q)?;
    let n = REPEAT_PATHS.min(l.config.mc.paths);
    let a = e.run(n, l.config.mc.seed)?;
    let b = e.run(n, l.config.mc.seed)?;
    let same_mc = format!("{a:?}") == format!("{b:?}");
    let mismatches = (!same_grid) as u32 + (!same_mc) as u32;
    Ok(CheckRow::new(
        CHECKS[10],
        mismatches == 0,
        mismatches as f64,
        0.0,
        format!("dual grid rebuilt bitwise: {same_grid}; {n}-path rerun bitwise: {same_mc}"),
    ))
}
