use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use lifecycle::commands::{self, Context};
use lifecycle::config::Overrides;
use lifecycle::verify;

#[derive(Parser)]
#[command(
    name = "lifecycle",
    version,
    about = "Consumption, investment and life insurance with a capital guarantee"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true, default_value = "config.json")]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the Monte Carlo path counts.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check coefficient invariants; exits 1 on any violation.
    Validate,
    /// Solve the dual PDE and write the grid.
    Solve,
    /// Simulate the unrestricted optimum.
    Simulate,
    /// Price the American put on the optimal portfolio.
    PricePut,
    /// Run the insured strategy and its floor check.
    Obpi,
    /// Run the acceptance suite; exits 1 if any check fails.
    Verify,
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let ctx = Context::open(
        &cli.config,
        &cli.out,
        Overrides {
            seed: cli.seed,
            paths: cli.paths,
        },
    )?;
    match cli.command {
        Command::Validate => {
            let r = commands::validate(&ctx)?;
            println!("{}", r.status);
            for v in &r.violations {
                println!("  {}: {}", v.kind, v.message);
            }
            Ok(r.ok())
        }
        Command::Solve => {
            let s = commands::solve(&ctx)?;
            println!(
                "H(0, z0) = {}  zeta = {}  dual value = {}  richardson ratio = {}",
                s.annuity0, s.zeta_hat, s.dual_value, s.convergence.richardson_ratio
            );
            Ok(true)
        }
        Command::Simulate => {
            let s = commands::simulate(&ctx)?;
            println!(
                "budget {} (y0 {}, se {})  primal {} (se {})  dual {}",
                s.pricing.budget_mean,
                s.pricing.y0,
                s.pricing.budget_se,
                s.physical.primal_mean,
                s.physical.primal_se,
                s.dual_value
            );
            Ok(true)
        }
        Command::PricePut => {
            for q in commands::price_put(&ctx)? {
                println!(
                    "rho {}  price {} (se {})  european {}  intrinsic {}",
                    q.rho, q.price, q.std_error, q.european, q.intrinsic0
                );
            }
            Ok(true)
        }
        Command::Obpi => {
            let s = commands::obpi(&ctx)?;
            println!(
                "rho0 {}  X_hat(0) {}  violations {} on {} nodes  max rho {}",
                s.rho0, s.x_hat0, s.violations, s.nodes, s.max_rho
            );
            Ok(s.violations == 0)
        }
        Command::Verify => {
            let (report, timings) = verify::verify(&ctx)?;
            for c in &report.checks {
                println!(
                    "{:<34} {:<4} {:>12.4e} <= {:<12.4e} {}",
                    c.check, c.status, c.statistic, c.tolerance, c.detail
                );
            }
            println!(
                "{:.1} s on {} threads",
                timings.total_seconds, timings.threads
            );
            Ok(report.all_pass())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
