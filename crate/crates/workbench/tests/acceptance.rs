//! Full acceptance run at desk scale. Prints one PASS/FAIL line per
//! criterion and a summary.
//!
//! A failed criterion is reported but does not fail the test target, so the
//! workspace suite records the outcome instead of stopping at it. Set
//! `TURING_ACCEPTANCE_STRICT=1` to exit nonzero on any failure.
//!
//! Takes about an hour and a half on one core. Set `TURING_ACCEPTANCE_SEED` to change
//! the base seed.

use std::process::ExitCode;

use turing_core::analysis::dominant_mode;
use turing_core::grid::GridSpec;
use turing_core::params::{params_for_pattern, PatternId};
use turing_core::solver::{run_to_steady_state, SolverError};
use turing_workbench::config::WorkbenchConfig;
use turing_workbench::experiment::pattern_seed;
use turing_workbench::gates::run_desk;

/// Modes on the wide 50-node domain, for information only.
fn wide_domain_modes(cfg: &WorkbenchConfig) {
    let grid = GridSpec::square(50, 100.0).expect("valid grid");
    for id in PatternId::ALL {
        let solver = cfg.solver.clone().with_seed(pattern_seed(cfg.seed, id));
        let k = match run_to_steady_state(&params_for_pattern(id), grid, &solver) {
            Ok(p) => dominant_mode(&p).map(|k| format!("{k:.3}")).unwrap_or_else(|e| e.to_string()),
            Err(SolverError::NotConverged { pattern, .. }) => {
                dominant_mode(&pattern).map(|k| format!("{k:.3} (not converged)")).unwrap_or_else(|e| e.to_string())
            }
            Err(e) => e.to_string(),
        };
        println!("[INFO] pattern {id} on 50 nodes over [-100, 100]^2 (spacing {:.2}): k = {k}", grid.dx());
    }
}

fn main() -> ExitCode {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).is_test(true).try_init();
    let mut cfg = WorkbenchConfig::default();
    if let Some(seed) = std::env::var("TURING_ACCEPTANCE_SEED").ok().and_then(|s| s.parse().ok()) {
        cfg.seed = seed;
    }
    let scratch = tempfile::TempDir::new().expect("scratch directory");
    println!(
        "acceptance: {n}x{n} grid on [-{h}, {h}]^2, {} epochs x {} restarts, seed {}",
        cfg.desk.epochs,
        cfg.desk.restarts,
        cfg.seed,
        n = cfg.grid.nodes,
        h = cfg.grid.half_extent
    );
    let outcome = run_desk(&cfg, scratch.path(), |c| println!("{c}"));
    wide_domain_modes(&cfg);
    println!("\nsummary:");
    for c in &outcome.criteria {
        let label = if c.id == 0 { "supplementary".to_string() } else { format!("criterion {:>2}", c.id) };
        println!("  {} {label} {}", if c.pass { "PASS" } else { "FAIL" }, c.name);
    }
    let failed = outcome.criteria.iter().filter(|c| !c.pass).count();
    println!("{} of {} criteria passed", outcome.criteria.len() - failed, outcome.criteria.len());
    let strict = std::env::var("TURING_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
