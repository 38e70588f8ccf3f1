//! Experiment matrices, run artifacts and the Markdown report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use turing_core::analysis::PatternStats;
use turing_core::grid::Pattern;
use turing_core::params::{params_for_pattern, PatternId, RdParams};
use turing_core::pinn::aggregate::restart_seeds;
use turing_core::pinn::{multi_restart, ParamSet, PinnError, RunAggregate, TrainConfig};
use turing_core::solver::{run_to_steady_state, SolverError};

use crate::config::WorkbenchConfig;
use crate::io::{fmt_f64, write_bytes, write_json, write_pattern, IoError};
use crate::reference::published;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matrix {
    Baseline,
    Tables,
    Desk,
}

impl FromStr for Matrix {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Matrix::Baseline),
            "tables" => Ok(Matrix::Tables),
            "desk" => Ok(Matrix::Desk),
            _ => Err(format!("unknown matrix `{s}` (expected baseline, tables or desk)")),
        }
    }
}

impl Matrix {
    pub fn cells(self) -> Vec<(PatternId, ParamSet)> {
        use ParamSet::*;
        use PatternId::*;
        match self {
            Matrix::Baseline => vec![(P, A), (P, B)],
            Matrix::Tables => vec![(P, C), (P, D), (P, E), (Q, C), (Q, D), (Q, E), (R, D)],
            Matrix::Desk => vec![(P, A), (P, B), (P, C), (P, D), (Q, E)],
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Pinn(#[from] PinnError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Analysis(#[from] turing_core::analysis::AnalysisError),
}

/// Solver seed used for the reference pattern of `id`.
pub fn pattern_seed(base: u64, id: PatternId) -> u64 {
    let k = PatternId::ALL.iter().position(|&p| p == id).unwrap_or(0) as u64;
    base.wrapping_mul(31).wrapping_add(k)
}

/// Solves for a steady state. Hitting the step budget is reported but the
/// last state is still returned, flagged in its provenance.
pub fn solve(p: &RdParams, cfg: &WorkbenchConfig, seed: u64) -> Result<Pattern, SolverError> {
    let grid = cfg.grid.spec().map_err(|e| SolverError::Config(e.to_string()))?;
    match run_to_steady_state(p, grid, &cfg.solver.clone().with_seed(seed)) {
        Err(SolverError::NotConverged { pattern, steps, max_rate }) => {
            log::warn!("no steady state after {steps} steps (max rate {max_rate:.3e}); keeping the last state");
            Ok(*pattern)
        }
        other => other,
    }
}

pub fn reference_pattern(id: PatternId, cfg: &WorkbenchConfig) -> Result<Pattern, SolverError> {
    solve(&params_for_pattern(id), cfg, pattern_seed(cfg.seed, id))
}

/// Restart seeds for one matrix cell.
pub fn cell_seeds(base: u64, id: PatternId, set: ParamSet, n: usize) -> Vec<u64> {
    let cell = pattern_seed(base, id).wrapping_mul(101).wrapping_add(set as u64 * 1000);
    restart_seeds(cell, n)
}

/// Timed restarts of one cell.
pub struct CellResult {
    pub pattern: PatternId,
    pub aggregate: RunAggregate,
    pub wall_time_s: f64,
}

pub fn run_cell(
    pattern: &Pattern,
    id: PatternId,
    set: ParamSet,
    train: &TrainConfig,
    restarts: usize,
    base_seed: u64,
) -> Result<CellResult, PinnError> {
    let start = Instant::now();
    let seeds = cell_seeds(base_seed, id, set, restarts);
    let aggregate = multi_restart(pattern, &params_for_pattern(id), set, train, &seeds)?;
    Ok(CellResult { pattern: id, aggregate, wall_time_s: start.elapsed().as_secs_f64() })
}

/// Columns: parameter, reference, mean, variance, error_pct; then a
/// `data_loss` row holding the mean data loss in the `mean` column.
pub fn aggregate_csv(agg: &RunAggregate) -> String {
    let mut s = String::from("parameter,reference,mean,variance,error_pct\n");
    for p in &agg.params {
        let _ = writeln!(s, "{},{},{},{},{}", p.id, fmt_f64(p.reference), fmt_f64(p.mean), fmt_f64(p.variance), fmt_f64(p.error_pct));
    }
    let _ = writeln!(s, "data_loss,,{},,", fmt_f64(agg.mean_data_loss));
    s
}

/// One row per (run, recorded epoch).
pub fn history_csv(agg: &RunAggregate) -> String {
    let mut s = String::from("restart_seed,epoch,mse_h,mse_f,mse_bc,total,d1,d2,alpha,beta,r1\n");
    for run in &agg.runs {
        for h in &run.history {
            let p = &h.params;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                run.restart_seed,
                h.epoch,
                fmt_f64(h.loss.mse_h),
                fmt_f64(h.loss.mse_f),
                fmt_f64(h.loss.mse_bc),
                fmt_f64(h.loss.total),
                fmt_f64(p.d1()),
                fmt_f64(p.d2()),
                fmt_f64(p.alpha()),
                fmt_f64(p.beta()),
                fmt_f64(p.r1())
            );
        }
    }
    s
}

/// Writes `run_<seed>.json` per run, `aggregate.csv`, `aggregate.json` and
/// `history.csv` into `dir`.
pub fn write_cell(dir: &Path, agg: &RunAggregate) -> Result<(), IoError> {
    for run in &agg.runs {
        write_json(&dir.join(format!("run_{}.json", run.restart_seed)), run)?;
    }
    write_json(&dir.join("aggregate.json"), agg)?;
    write_bytes(&dir.join("aggregate.csv"), aggregate_csv(agg).as_bytes())?;
    write_bytes(&dir.join("history.csv"), history_csv(agg).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: WorkbenchConfig,
    pub solver_seeds: Vec<(String, u64)>,
    pub restart_seeds: Vec<(String, Vec<u64>)>,
    pub files: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &WorkbenchConfig) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            solver_seeds: Vec::new(),
            restart_seeds: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), IoError> {
        write_json(&dir.join("manifest.json"), self)
    }
}

fn fmt_opt(x: Option<f64>, prec: usize) -> String {
    x.map_or("-".into(), |v| format!("{v:.prec$}"))
}

/// Markdown section for one cell with the published numbers alongside.
pub fn cell_markdown(cell: &CellResult) -> String {
    let agg = &cell.aggregate;
    let mut s = String::new();
    let _ = writeln!(s, "### Pattern {} / Set {}\n", cell.pattern, agg.set);
    let _ = writeln!(
        s,
        "{} successful restarts, {} failed, {:.0} s wall time.\n",
        agg.runs.len(),
        agg.failed.len(),
        cell.wall_time_s
    );
    let entry = published(cell.pattern, agg.set);
    s.push_str("| parameter | reference | mean | variance | error % | published mean | published variance | published error % |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for p in &agg.params {
        let row = entry.and_then(|r| r.rows.iter().find(|row| row.id == p.id));
        let _ = writeln!(
            s,
            "| {} | {:.3} | {:.3} | {:.1e} | {:.1} | {} | {} | {} |",
            p.id,
            p.reference,
            p.mean,
            p.variance,
            p.error_pct,
            fmt_opt(row.map(|r| r.mean), 3),
            row.and_then(|r| r.variance).map_or("-".into(), |v| format!("{v:.1e}")),
            fmt_opt(row.and_then(|r| r.error_pct), 1),
        );
    }
    let _ = writeln!(
        s,
        "| data loss | | {:.1e} | | | {} | | |",
        agg.mean_data_loss,
        entry.map_or("-".into(), |r| format!("{:.1e}", r.data_loss))
    );
    if let Some(note) = entry.map(|r| r.note).filter(|n| !n.is_empty()) {
        let _ = writeln!(s, "\nPublished note: {note}.");
    }
    if !agg.alternative_candidates.is_empty() {
        let _ = writeln!(s, "\nAlternative-solution candidates (restart seeds): {:?}.", agg.alternative_candidates);
    }
    for f in &agg.failed {
        let _ = writeln!(s, "\nFailed restart {}: {}.", f.restart_seed, f.error);
    }
    s
}

pub fn magnitude_note(stats: &[(PatternId, PatternStats)]) -> Option<String> {
    let get = |id| stats.iter().find(|(p, _)| *p == id).map(|(_, s)| s.max_abs_u());
    let (r, p) = (get(PatternId::R)?, get(PatternId::P)?);
    Some(format!(
        "Pattern R reaches max |u| = {r:.3} against {p:.3} for Pattern P ({:.0}x). Its data losses are correspondingly \
         larger in absolute terms.",
        r / p
    ))
}

/// Runs a matrix and writes every artifact plus `report.md` under `dir`.
/// Returns the report text.
pub fn run_matrix(matrix: Matrix, cfg: &WorkbenchConfig, dir: &Path) -> Result<(String, Manifest), ExperimentError> {
    let (train, restarts) = match matrix {
        Matrix::Desk => (TrainConfig { epochs: cfg.desk.epochs, ..cfg.train.clone() }, cfg.desk.restarts),
        _ => (cfg.train.clone(), cfg.restarts),
    };
    let mut manifest = Manifest::new(&format!("experiment {matrix:?}").to_lowercase(), cfg);
    let cells = matrix.cells();
    let mut patterns: Vec<(PatternId, Pattern)> = Vec::new();
    let mut report = format!(
        "# Experiment `{}`\n\nGrid {}x{} on [-{h}, {h}]^2, {} epochs, {} restarts per cell, base seed {}.\n\
         Published columns are shown for comparison only.\n\n",
        format!("{matrix:?}").to_lowercase(),
        cfg.grid.nodes,
        cfg.grid.nodes,
        train.epochs,
        restarts,
        cfg.seed,
        h = cfg.grid.half_extent,
    );
    let mut stats = Vec::new();
    for &(id, set) in &cells {
        if !patterns.iter().any(|(p, _)| *p == id) {
            let seed = pattern_seed(cfg.seed, id);
            let pat = solve(&params_for_pattern(id), cfg, seed)?;
            let path = dir.join(format!("pattern_{id}.csv"));
            write_pattern(&path, &pat)?;
            manifest.solver_seeds.push((id.to_string(), seed));
            manifest.files.push(path);
            stats.push((id, PatternStats::of(&pat)?));
            patterns.push((id, pat));
        }
        let pat = &patterns.iter().find(|(p, _)| *p == id).expect("pattern generated above").1;
        log::info!("running pattern {id} set {set}");
        let cell = run_cell(pat, id, set, &train, restarts, cfg.seed)?;
        let cell_dir = dir.join(format!("{id}_{set}"));
        write_cell(&cell_dir, &cell.aggregate)?;
        manifest.restart_seeds.push((format!("{id}/{set}"), cell.aggregate.runs.iter().map(|r| r.restart_seed).collect()));
        manifest.files.push(cell_dir);
        report.push_str(&cell_markdown(&cell));
        report.push('\n');
    }
    if let Some(note) = magnitude_note(&stats) {
        let _ = writeln!(report, "## Magnitude\n\n{note}\n");
    }
    let report_path = dir.join("report.md");
    write_bytes(&report_path, report.as_bytes())?;
    manifest.files.push(report_path);
    manifest.write(dir)?;
    Ok((report, manifest))
}
