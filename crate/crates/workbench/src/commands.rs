//! Subcommand implementations. Each returns an [`Outcome`] or a
//! [`CliError`]; `main` maps both onto the exit-code contract.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use turing_core::analysis::{validate_inferred, AnalysisError, PatternStats};
use turing_core::grid::Pattern;
use turing_core::params::{params_for_pattern, ParamError, PatternId, RdParams};
use turing_core::pinn::{multi_restart, InferenceRun, ParamSet, RunAggregate};

use crate::config::{ConfigError, WorkbenchConfig};
use crate::experiment::{cell_markdown, pattern_seed, run_matrix, solve, write_cell, CellResult, Manifest, Matrix};
use crate::gates::run_desk;
use crate::io::{field_to_pgm, read_pattern, read_text, write_bytes, write_json, write_pattern, IoError, RenderBounds};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, configuration or input files.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Param(#[from] ParamError),
    /// The computation itself failed.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            _ => 2,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// False for a validation FAIL or a failed acceptance gate.
    pub pass: bool,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

/// Parameter overrides for `generate`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ParamOverrides {
    pub d1: Option<f64>,
    pub d2: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub r1: Option<f64>,
    pub r2: Option<f64>,
}

impl ParamOverrides {
    fn is_empty(&self) -> bool {
        *self == ParamOverrides::default()
    }

    /// Applies the overrides to `base`, or builds parameters from scratch
    /// when there is no base and all six are given.
    pub fn resolve(&self, base: Option<RdParams>) -> Result<RdParams, CliError> {
        let pick = |o: Option<f64>, f: fn(&RdParams) -> f64, name: &str| match (o, &base) {
            (Some(v), _) => Ok(v),
            (None, Some(b)) => Ok(f(b)),
            (None, None) => Err(CliError::Usage(format!("--{name} is required without --pattern"))),
        };
        Ok(RdParams::new(
            pick(self.d1, RdParams::d1, "d1")?,
            pick(self.d2, RdParams::d2, "d2")?,
            pick(self.alpha, RdParams::alpha, "alpha")?,
            pick(self.beta, RdParams::beta, "beta")?,
            pick(self.r1, RdParams::r1, "r1")?,
            pick(self.r2, RdParams::r2, "r2")?,
        )?)
    }
}

fn parse_pattern_id(s: &str) -> Result<PatternId, CliError> {
    s.parse().map_err(|e: ParamError| CliError::Usage(e.to_string()))
}

/// Writes a steady-state pattern to `output`, or `<out>/pattern_<name>.csv`.
pub fn generate(
    cfg: &WorkbenchConfig,
    pattern: Option<&str>,
    overrides: &ParamOverrides,
    output: Option<&Path>,
) -> Result<Outcome, CliError> {
    let id = pattern.map(parse_pattern_id).transpose()?;
    let params = overrides.resolve(id.map(params_for_pattern))?;
    let name = match id {
        Some(id) if overrides.is_empty() => id.to_string(),
        _ => "custom".to_string(),
    };
    let seed = id.map_or(cfg.seed, |id| pattern_seed(cfg.seed, id));
    let pat = solve(&params, cfg, seed).map_err(runtime)?;
    let path = output.map_or_else(|| cfg.out_dir.join(format!("pattern_{name}.csv")), Path::to_path_buf);
    write_pattern(&path, &pat)?;
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut manifest = Manifest::new(&format!("generate {name}"), cfg);
    manifest.solver_seeds.push((name.clone(), seed));
    manifest.files = vec![path.clone(), crate::io::sidecar_path(&path)];
    manifest.write(&dir)?;
    let stats = PatternStats::of(&pat).map_err(runtime)?;
    let steps = pat.provenance.as_ref().map_or(0, |p| p.steps);
    Ok(Outcome {
        pass: true,
        summary: format!(
            "pattern {name}: {} steps, u in [{:.4}, {:.4}], dominant mode {}",
            steps,
            stats.min_u,
            stats.max_u,
            stats.dominant_k.map_or("-".into(), |k| format!("{k:.3}"))
        ),
        files: manifest.files,
    })
}

/// Loads a pattern from a CSV file, or solves it when `source` names a
/// published pattern and no such file exists.
pub fn load_or_solve(source: &str, cfg: &WorkbenchConfig) -> Result<(Pattern, String), CliError> {
    let path = Path::new(source);
    if path.exists() {
        let name = path.file_stem().map_or("pattern".into(), |s| s.to_string_lossy().into_owned());
        return Ok((read_pattern(path)?, name));
    }
    match source.parse::<PatternId>() {
        Ok(id) => Ok((solve(&params_for_pattern(id), cfg, pattern_seed(cfg.seed, id)).map_err(runtime)?, id.to_string())),
        Err(_) => Err(CliError::Usage(format!("{source}: no such file and not a pattern name (P, Q or R)"))),
    }
}

/// Multi-restart inference of one parameter set. Parameters outside the
/// set are fixed at `reference` (from `--pattern`, the pattern name, or
/// the provenance sidecar).
pub fn infer(
    cfg: &WorkbenchConfig,
    source: &str,
    set: ParamSet,
    reference: Option<&str>,
) -> Result<Outcome, CliError> {
    let (pat, name) = load_or_solve(source, cfg)?;
    let reference = match reference.map(parse_pattern_id).transpose()? {
        Some(id) => params_for_pattern(id),
        None => match (source.parse::<PatternId>(), pat.source_params()) {
            (_, Some(p)) => p,
            (Ok(id), None) => params_for_pattern(id),
            (Err(_), None) => {
                return Err(CliError::Usage(
                    "cannot tell the reference parameters: pass --pattern or keep the provenance sidecar".into(),
                ))
            }
        },
    };
    let dir = cfg.out_dir.join(format!("infer_{name}_{set}"));
    let seed_id = source.parse().unwrap_or(PatternId::P);
    let seeds = crate::experiment::cell_seeds(cfg.seed, seed_id, set, cfg.restarts);
    let start = std::time::Instant::now();
    let agg = multi_restart(&pat, &reference, set, &cfg.train, &seeds).map_err(runtime)?;
    let cell = CellResult { pattern: seed_id, aggregate: agg, wall_time_s: start.elapsed().as_secs_f64() };
    write_cell(&dir, &cell.aggregate)?;
    let mut manifest = Manifest::new(&format!("infer {source} --set {set}"), cfg);
    manifest.restart_seeds.push((format!("{name}/{set}"), seeds));
    manifest.files.push(dir.clone());
    manifest.write(&dir)?;
    let mut summary = String::new();
    for p in &cell.aggregate.params {
        let _ = write!(summary, "{}={:.4} (var {:.1e}, {:.1}%) ", p.id, p.mean, p.variance, p.error_pct);
    }
    let _ = write!(
        summary,
        "data loss {:.2e}; {} ok, {} failed",
        cell.aggregate.mean_data_loss,
        cell.aggregate.runs.len(),
        cell.aggregate.failed.len()
    );
    Ok(Outcome { pass: true, summary, files: vec![dir] })
}

/// Accepted forms of an inferred-parameters file.
#[derive(Deserialize)]
#[serde(untagged)]
enum ParamsFile {
    Params(RdParams),
    Run(Box<InferenceRun>),
    Aggregate(Box<RunAggregate>),
}

/// Reads parameters from a plain parameter object, a per-run JSON, or an
/// aggregate JSON (whose means replace the reference values).
pub fn load_params(path: &Path) -> Result<RdParams, CliError> {
    let text = read_text(path)?;
    let parsed: ParamsFile = serde_json::from_str(&text).map_err(|e| {
        CliError::Usage(format!("{}: not a parameter, run or aggregate file ({e})", path.display()))
    })?;
    match parsed {
        ParamsFile::Params(p) => Ok(p),
        ParamsFile::Run(r) => Ok(r.inferred),
        ParamsFile::Aggregate(a) => {
            let mut p = a.reference;
            for s in &a.params {
                p = p.with(s.id, s.mean)?;
            }
            Ok(p)
        }
    }
}

/// Regenerates a pattern from inferred parameters and compares it with the
/// reference. `pass` carries the verdict.
pub fn validate(cfg: &WorkbenchConfig, params_file: &Path, reference_file: &Path) -> Result<Outcome, CliError> {
    let inferred = load_params(params_file)?;
    let reference = read_pattern(reference_file)?;
    let solver = cfg.solver.clone().with_seed(cfg.seed);
    let (report, generated) = validate_inferred(&inferred, &reference, &solver, cfg.validation_threshold)
        .map_err(|e| match e {
            AnalysisError::Shape { .. } | AnalysisError::ZeroReference => CliError::Usage(e.to_string()),
            other => runtime(other),
        })?;
    let dir = cfg.out_dir.join("validate");
    let report_path = dir.join("validation.json");
    let generated_path = dir.join("generated.csv");
    write_json(&report_path, &report)?;
    write_pattern(&generated_path, &generated)?;
    let mut manifest = Manifest::new("validate", cfg);
    manifest.solver_seeds.push(("generated".into(), cfg.seed));
    manifest.files = vec![report_path.clone(), generated_path.clone()];
    manifest.write(&dir)?;
    Ok(Outcome {
        pass: report.pass,
        summary: format!(
            "{}: norm diffs u {:.2}% v {:.2}% (threshold {:.0}%), k {} vs {:.3} (bin {:.3})",
            if report.pass { "PASS" } else { "FAIL" },
            100.0 * report.rel_diff_u,
            100.0 * report.rel_diff_v,
            100.0 * report.threshold,
            report.k_generated.map_or("-".into(), |k| format!("{k:.3}")),
            report.k_reference,
            report.bin_width,
        ),
        files: vec![report_path, generated_path],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSidecar {
    pub source: PathBuf,
    pub width: usize,
    pub height: usize,
    pub u: RenderBounds,
    pub v: RenderBounds,
}

/// Writes `<stem>_u.pgm`, `<stem>_v.pgm` and `<stem>_render.json` under
/// `out_dir`.
pub fn render(input: &Path, out_dir: &Path) -> Result<Outcome, CliError> {
    let pat = read_pattern(input)?;
    let g = pat.grid();
    let stem = input.file_stem().map_or("pattern".into(), |s| s.to_string_lossy().into_owned());
    let mut files = Vec::new();
    let mut bounds = Vec::new();
    for (name, field) in [("u", pat.u()), ("v", pat.v())] {
        let (img, b) = field_to_pgm(field, g.nx(), g.ny());
        if b.constant {
            log::warn!("{name} is constant ({}); rendering mid-grey", b.min);
        }
        let path = out_dir.join(format!("{stem}_{name}.pgm"));
        write_bytes(&path, &img)?;
        files.push(path);
        bounds.push(b);
    }
    let side = RenderSidecar { source: input.to_path_buf(), width: g.nx(), height: g.ny(), u: bounds[0], v: bounds[1] };
    let side_path = out_dir.join(format!("{stem}_render.json"));
    write_json(&side_path, &side)?;
    files.push(side_path);
    Ok(Outcome { pass: true, summary: format!("rendered {}x{} images", g.nx(), g.ny()), files })
}

/// Runs an experiment matrix into `<out>/<matrix>/`. The desk matrix also
/// runs every acceptance gate; any failing gate makes `pass` false.
pub fn experiment(cfg: &WorkbenchConfig, matrix: Matrix) -> Result<Outcome, CliError> {
    let name = format!("{matrix:?}").to_lowercase();
    let dir = cfg.out_dir.join(&name);
    if matrix != Matrix::Desk {
        let (_, manifest) = run_matrix(matrix, cfg, &dir).map_err(runtime)?;
        return Ok(Outcome { pass: true, summary: format!("report written to {}", dir.join("report.md").display()), files: manifest.files });
    }
    let scratch = dir.join("scratch");
    let outcome = run_desk(cfg, &scratch, |c| log::info!("{c}"));
    let mut manifest = Manifest::new("experiment desk", cfg);
    let mut report = format!(
        "# Experiment `desk`\n\nGrid {n}x{n} on [-{h}, {h}]^2, {} epochs, {} restarts per cell, base seed {}.\n\
         Published columns are shown for comparison only.\n\n## Acceptance gates\n\n",
        cfg.desk.epochs,
        cfg.desk.restarts,
        cfg.seed,
        n = cfg.grid.nodes,
        h = cfg.grid.half_extent,
    );
    for c in &outcome.criteria {
        let _ = writeln!(report, "- {c}");
    }
    report.push_str("\n## Inference cells\n\n");
    for (id, pat, _) in &outcome.forward.patterns {
        let path = dir.join(format!("pattern_{id}.csv"));
        write_pattern(&path, pat)?;
        manifest.solver_seeds.push((id.to_string(), pattern_seed(cfg.seed, *id)));
        manifest.files.push(path);
    }
    for cell in &outcome.cells {
        let cell_dir = dir.join(format!("{}_{}", cell.pattern, cell.aggregate.set));
        write_cell(&cell_dir, &cell.aggregate)?;
        manifest.restart_seeds.push((
            format!("{}/{}", cell.pattern, cell.aggregate.set),
            cell.aggregate.runs.iter().map(|r| r.restart_seed).collect(),
        ));
        manifest.files.push(cell_dir);
        report.push_str(&cell_markdown(cell));
        report.push('\n');
    }
    if let Some(v) = &outcome.validation {
        let path = dir.join("alternative_validation.json");
        write_json(&path, v)?;
        manifest.files.push(path);
    }
    let report_path = dir.join("report.md");
    write_bytes(&report_path, report.as_bytes())?;
    manifest.files.push(report_path.clone());
    manifest.write(&dir)?;
    let failed: Vec<String> = outcome.criteria.iter().filter(|c| !c.pass).map(|c| c.id.to_string()).collect();
    let pass = failed.is_empty();
    Ok(Outcome {
        pass,
        summary: if pass {
            format!("all gates passed; report at {}", report_path.display())
        } else {
            format!("failed gates: {}; report at {}", failed.join(", "), report_path.display())
        },
        files: manifest.files,
    })
}
