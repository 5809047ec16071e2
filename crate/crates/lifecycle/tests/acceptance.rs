//! Full acceptance suite on the reference configuration (1e5 paths, 500 steps,
//! 200x200 PDE). Prints one line per criterion and fails if any line fails.

use std::fs;
use std::path::PathBuf;

use lifecycle::commands::{self, Context};
use lifecycle::config::{self, Overrides};
use lifecycle::verify::{self, CheckRow, CHECKS, REPORT_CSV, REPORT_JSON};

/// Criterion 1 runtime budget, stated for 8 cores.
const GIRSANOV_BUDGET_S: f64 = 60.0;

fn reference_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.json")
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::open(&reference_config(), dir.path(), Overrides::default()).unwrap();
    assert_eq!(ctx.loaded.config, config::reference());
    commands::solve(&ctx).unwrap();

    let (first, timings) = verify::verify(&ctx).unwrap();
    let json1 = fs::read(dir.path().join(REPORT_JSON)).unwrap();
    let csv1 = fs::read(dir.path().join(REPORT_CSV)).unwrap();
    let (second, _) = verify::verify(&ctx).unwrap();
    let json2 = fs::read(dir.path().join(REPORT_JSON)).unwrap();
    let csv2 = fs::read(dir.path().join(REPORT_CSV)).unwrap();

    assert_eq!(first.checks.len(), CHECKS.len());
    let names: Vec<&str> = first.checks.iter().map(|c| c.check.as_str()).collect();
    assert_eq!(names, CHECKS);

    let girsanov_s = timings
        .checks
        .iter()
        .find(|t| t.check == CHECKS[0])
        .unwrap()
        .seconds;
    let mut lines = Vec::new();
    let mut ok = true;
    let mut line = |n: usize, pass: bool, text: String| {
        ok &= pass;
        lines.push(format!(
            "criterion {n:>2} [{}] {text}",
            if pass { "PASS" } else { "FAIL" }
        ));
    };
    let row = |i: usize| -> &CheckRow { &first.checks[i] };
    for (i, c) in first.checks.iter().enumerate().take(10) {
        let mut text = format!(
            "{}: statistic {:e} tolerance {:e}; {}",
            c.check, c.statistic, c.tolerance, c.detail
        );
        let mut pass = c.passed();
        if i == 0 {
            // measured on the threads available here; fewer threads only make it slower
            let fast = girsanov_s < GIRSANOV_BUDGET_S;
            pass &= fast;
            text.push_str(&format!(
                "; runtime {girsanov_s:.1} s on {} threads (budget {GIRSANOV_BUDGET_S} s on 8)",
                timings.threads
            ));
        }
        line(i + 1, pass, text);
    }
    let identical = json1 == json2 && csv1 == csv2 && first.checks == second.checks;
    line(
        11,
        row(10).passed() && identical,
        format!(
            "determinism: two verify runs bytewise identical {identical}; {}",
            row(10).detail
        ),
    );
    for l in &lines {
        println!("{l}");
    }
    println!(
        "verify total {:.1} s on {} threads",
        timings.total_seconds, timings.threads
    );
    if !ok {
        eprintln!("acceptance failures:\n{}", lines.join("\n"));
        std::process::exit(1);
    }
}
