//! The acceptance gates. Each returns a [`Criterion`] carrying a pass flag
//! and a one-line summary of what was measured.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use turing_core::analysis::{dominant_mode, l2_norm, radial_spectrum, validate_inferred, ValidationReport};
use turing_core::grid::{GridSpec, Pattern};
use turing_core::nn::{Mlp, ParamMask, TrainableSet};
use turing_core::params::{params_for_pattern, reaction_rhs, ParamId, PatternId, RdParams};
use turing_core::pinn::{
    build_point_sets, gradient_check, loss_value, train_inverse, FullBatch, ParamSet, PointConfig, PointSets,
    TrainConfig,
};
use turing_core::solver::{seed_fields, steady_residual_rms, SolverConfig};

use crate::config::WorkbenchConfig;
use crate::experiment::{pattern_seed, run_cell, solve, CellResult};
use crate::io::{pattern_to_csv, read_pattern, write_json, write_pattern};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Criterion {
    fn new(id: u8, name: &str, pass: bool, detail: String) -> Self {
        Criterion { id, name: name.to_string(), pass, detail }
    }

    fn failed(id: u8, name: &str, err: impl fmt::Display) -> Self {
        Criterion::new(id, name, false, format!("error: {err}"))
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        match self.id {
            0 => write!(f, "[{tag}] supplementary {}: {}", self.name, self.detail),
            id => write!(f, "[{tag}] criterion {id:>2} {}: {}", self.name, self.detail),
        }
    }
}

fn pct(x: f64, reference: f64) -> f64 {
    100.0 * (x - reference) / reference.abs()
}

/// Generated reference patterns with their solve times.
pub struct ForwardRuns {
    pub patterns: Vec<(PatternId, Pattern, f64)>,
}

impl ForwardRuns {
    pub fn get(&self, id: PatternId) -> Option<&Pattern> {
        self.patterns.iter().find(|(p, _, _)| *p == id).map(|(_, pat, _)| pat)
    }
}

pub const MODE_TOLERANCE: f64 = 0.15;
pub const SOLVE_BUDGET_S: f64 = 120.0;

/// Criterion 1: dominant modes of the three published parameter sets.
pub fn forward_modes(cfg: &WorkbenchConfig) -> (Criterion, ForwardRuns) {
    const NAME: &str = "forward pattern modes";
    let mut patterns = Vec::new();
    let mut parts = Vec::new();
    let mut pass = true;
    for id in PatternId::ALL {
        let start = Instant::now();
        match solve(&params_for_pattern(id), cfg, pattern_seed(cfg.seed, id)) {
            Ok(p) => {
                let secs = start.elapsed().as_secs_f64();
                let k = dominant_mode(&p);
                let target = id.reference_mode();
                let ok_k = k.as_ref().is_ok_and(|k| ((k - target) / target).abs() <= MODE_TOLERANCE);
                let converged = p.provenance.as_ref().is_some_and(|pr| pr.final_max_rate < pr.steady_tol);
                pass &= ok_k && secs <= SOLVE_BUDGET_S && converged;
                parts.push(match k {
                    Ok(k) => format!("{id} k={k:.3} ({:+.1}% vs {target}) in {secs:.0}s", pct(k, target)),
                    Err(e) => format!("{id} {e}"),
                });
                patterns.push((id, p, secs));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{id} {e}"));
            }
        }
    }
    (Criterion::new(1, NAME, pass, parts.join("; ")), ForwardRuns { patterns })
}

fn max_abs(field: &[f64]) -> f64 {
    field.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

/// Criterion 2: spotted pattern R is at least ten times larger than P.
pub fn magnitude(runs: &ForwardRuns) -> Criterion {
    const NAME: &str = "pattern R magnitude";
    let (Some(p), Some(r)) = (runs.get(PatternId::P), runs.get(PatternId::R)) else {
        return Criterion::failed(2, NAME, "patterns P and R are required");
    };
    let (mp, mr) = (max_abs(p.u()), max_abs(r.u()));
    let ratio = mr / mp;
    Criterion::new(2, NAME, ratio >= 10.0, format!("max|u| R={mr:.3} P={mp:.4} ratio {ratio:.1} (need >= 10)"))
}

/// Criterion 3: exact loss gradients against central differences on a
/// 5x5 grid with small networks.
pub fn gradient_oracle() -> Criterion {
    const NAME: &str = "gradient oracle";
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for (k, layers) in [vec![2, 8, 8, 2], vec![2, 8, 2], vec![2, 2, 2, 2]].into_iter().enumerate() {
        for id in PatternId::ALL {
            let seed = 10 * k as u64 + id as u64;
            let pattern = seed_fields(GridSpec::square(5, 2.0).unwrap(), 0.3, seed);
            let sets = match build_point_sets(&pattern, &PointConfig { n_bc: 12, ..Default::default() }, seed) {
                Ok(s) => s,
                Err(e) => return Criterion::failed(3, NAME, e),
            };
            let net = Mlp::new(&layers, 2.0, seed).expect("valid layout");
            let ts = TrainableSet::new(net, params_for_pattern(id), ParamMask::only(&ParamId::TRAINABLE));
            match gradient_check(&ts, &sets, &FullBatch::new(&sets).as_batch(), 10.0, 1e-6) {
                Ok(r) => {
                    checked += r.n_checked;
                    if r.max_rel_error >= worst.0 {
                        worst = (r.max_rel_error, format!("{} on {layers:?}", r.worst_name));
                    }
                }
                Err(e) => return Criterion::failed(3, NAME, e),
            }
        }
    }
    Criterion::new(
        3,
        NAME,
        worst.0 < 1e-5,
        format!("{checked} components, max relative error {:.2e} ({}), need < 1e-5", worst.0, worst.1),
    )
}

/// Criterion 4: residual of the stored fields with the true parameters.
pub fn steady_residual(runs: &ForwardRuns, solver: &SolverConfig) -> Criterion {
    const NAME: &str = "steady-state residual";
    if runs.patterns.is_empty() {
        return Criterion::failed(4, NAME, "no patterns");
    }
    let bound = 10.0 * solver.steady_tol;
    let mut pass = true;
    let parts: Vec<String> = runs
        .patterns
        .iter()
        .map(|(id, p, _)| {
            let rms = steady_residual_rms(p, &params_for_pattern(*id), solver.boundary);
            pass &= rms <= bound;
            format!("{id} rms {rms:.2e}")
        })
        .collect();
    Criterion::new(4, NAME, pass, format!("{} (bound {bound:.0e})", parts.join(", ")))
}

pub const BASELINE_TOLERANCE_PCT: f64 = 15.0;
pub const SET_D_TOLERANCE_PCT: f64 = 20.0;
pub const DATA_LOSS_GATE: f64 = 1e-4;
pub const SET_BUDGET_S: f64 = 15.0 * 60.0;

fn describe(cell: &CellResult) -> String {
    let agg = &cell.aggregate;
    let params: Vec<String> =
        agg.params.iter().map(|p| format!("{}={:.3} ({:.1}%)", p.id, p.mean, p.error_pct)).collect();
    format!(
        "set {}: {} data loss {:.1e}, {:.0}s",
        agg.set,
        params.join(" "),
        agg.mean_data_loss,
        cell.wall_time_s
    )
}

/// Worst ratio of final to initial total loss over a cell's restarts.
pub fn loss_drop(cell: &CellResult) -> f64 {
    cell.aggregate
        .runs
        .iter()
        .map(|r| match (r.history.first(), r.history.last()) {
            (Some(first), Some(last)) => last.loss.total / first.loss.total,
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

/// Criterion 5: sets A and B on pattern P at desk scale. Every restart's
/// final data loss must meet the bound.
pub fn baseline(a: &CellResult, b: &CellResult) -> Criterion {
    let mut pass = true;
    let mut parts = Vec::new();
    for cell in [a, b] {
        let agg = &cell.aggregate;
        let worst = agg.runs.iter().map(|r| r.final_loss.mse_h).fold(0.0, f64::max);
        pass &= agg.failed.is_empty() && !agg.runs.is_empty();
        pass &= agg.params.iter().all(|p| p.error_pct <= BASELINE_TOLERANCE_PCT);
        pass &= worst <= DATA_LOSS_GATE;
        pass &= cell.wall_time_s <= SET_BUDGET_S;
        parts.push(format!("{}, worst {worst:.1e}", describe(cell)));
    }
    Criterion::new(
        5,
        "baseline sets A/B on P",
        pass,
        format!("{} (need <= 15%, loss <= 1e-4, <= 900s)", parts.join("; ")),
    )
}

/// Supplementary check: the total loss of every set A restart falls at
/// least a hundredfold.
pub fn loss_trend(a: &CellResult) -> Criterion {
    let worst = loss_drop(a);
    Criterion::new(
        0,
        "set A loss trend",
        a.aggregate.runs.len() > 0 && worst < 1e-2,
        format!("final/initial total loss, worst restart {worst:.1e} (need < 1e-2)"),
    )
}

/// Criterion 6: set D on pattern P.
pub fn set_d(d: &CellResult) -> Criterion {
    let agg = &d.aggregate;
    let pass = agg.failed.is_empty()
        && agg.params.iter().all(|p| p.error_pct <= SET_D_TOLERANCE_PCT)
        && agg.mean_data_loss <= DATA_LOSS_GATE;
    Criterion::new(6, "set D on P", pass, format!("{} (need <= 20%, loss <= 1e-4)", describe(d)))
}

fn max_rel_deviation(p: &RdParams, reference: &RdParams, ids: &[ParamId]) -> f64 {
    ids.iter().map(|&id| ((p.get(id) - reference.get(id)) / reference.get(id)).abs()).fold(0.0, f64::max)
}

/// Criterion 7: some set C restart lands on clearly different parameters
/// with a data loss comparable to set A, and regenerating from them
/// reproduces pattern P.
pub fn alternative_solution(
    c: &CellResult,
    a: &CellResult,
    p_pattern: &Pattern,
    cfg: &WorkbenchConfig,
) -> (Criterion, Option<ValidationReport>) {
    const NAME: &str = "set C alternative solution";
    let reference = params_for_pattern(PatternId::P);
    let loss_bound = 5.0 * a.aggregate.mean_data_loss;
    let ids = ParamSet::C.trainable();
    let candidate = c
        .aggregate
        .runs
        .iter()
        .filter(|r| max_rel_deviation(&r.inferred, &reference, ids) > 0.20 && r.final_loss.mse_h <= loss_bound)
        .min_by(|x, y| x.final_loss.mse_h.total_cmp(&y.final_loss.mse_h));
    let Some(run) = candidate else {
        let seen: Vec<String> = c
            .aggregate
            .runs
            .iter()
            .map(|r| format!("dev {:.0}% loss {:.1e}", 100.0 * max_rel_deviation(&r.inferred, &reference, ids), r.final_loss.mse_h))
            .collect();
        return (
            Criterion::new(7, NAME, false, format!("no restart deviates > 20% with loss <= {loss_bound:.1e}: {}", seen.join(", "))),
            None,
        );
    };
    let seed = cfg.seed.wrapping_add(7_000);
    match validate_inferred(&run.inferred, p_pattern, &cfg.solver.clone().with_seed(seed), cfg.validation_threshold) {
        Ok((report, _)) => {
            let p = &run.inferred;
            let detail = format!(
                "restart {} D1={:.3} D2={:.3} alpha={:.3} beta={:.3} (max dev {:.0}%), loss {:.1e} vs bound {loss_bound:.1e}; \
                 regenerated norm diffs u {:.1}% v {:.1}%, k {:.3} vs {:.3}",
                run.restart_seed,
                p.d1(),
                p.d2(),
                p.alpha(),
                p.beta(),
                100.0 * max_rel_deviation(p, &reference, ids),
                run.final_loss.mse_h,
                100.0 * report.rel_diff_u,
                100.0 * report.rel_diff_v,
                report.k_generated.unwrap_or(f64::NAN),
                report.k_reference,
            );
            (Criterion::new(7, NAME, report.pass, detail), Some(report))
        }
        Err(e) => (Criterion::failed(7, NAME, e), None),
    }
}

/// Criterion 8: regenerating Q with the set E means and `r1` raised by at
/// least half raises both norms while the mode stays within one bin.
pub fn r1_scaling(e: &CellResult, q_pattern: &Pattern, cfg: &WorkbenchConfig) -> Criterion {
    const NAME: &str = "r1 scaling on Q";
    let truth = params_for_pattern(PatternId::Q);
    let agg = &e.aggregate;
    let mean = |id| agg.summary(id).map_or(truth.get(id), |s| s.mean);
    let r1 = mean(ParamId::R1).max(1.5 * truth.r1());
    let params = RdParams::new(mean(ParamId::D1), truth.d2(), mean(ParamId::Alpha), mean(ParamId::Beta), r1, truth.r2());
    let params = match params {
        Ok(p) => p,
        Err(e) => return Criterion::failed(8, NAME, e),
    };
    let used = format!(
        "D1={:.3} alpha={:.3} beta={:.3} r1={:.3}",
        params.d1(),
        params.alpha(),
        params.beta(),
        params.r1()
    );
    let regenerated = match solve(&params, cfg, cfg.seed.wrapping_add(8_000)) {
        Ok(p) => p,
        Err(e) => return Criterion::failed(8, NAME, format!("{used}: {e}")),
    };
    let (u0, v0) = (l2_norm(q_pattern.u()), l2_norm(q_pattern.v()));
    let (u1, v1) = (l2_norm(regenerated.u()), l2_norm(regenerated.v()));
    let k0 = dominant_mode(q_pattern).ok();
    let k1 = dominant_mode(&regenerated).ok();
    let dk = radial_spectrum(q_pattern.u(), q_pattern.grid()).map_or(f64::NAN, |s| s.dk);
    let same_mode = matches!((k0, k1), (Some(a), Some(b)) if (a - b).abs() <= dk);
    let pass = u1 > u0 && v1 > v0 && same_mode;
    Criterion::new(
        8,
        NAME,
        pass,
        format!(
            "{used}: l2_u {u0:.2} -> {u1:.2}, l2_v {v0:.2} -> {v1:.2}, k {} -> {} (bin {dk:.3})",
            k0.map_or("-".into(), |k| format!("{k:.3}")),
            k1.map_or("-".into(), |k| format!("{k:.3}")),
        ),
    )
}

/// Criterion 9: repeated runs and file writes are bit-identical and the
/// pattern CSV round-trips byte for byte. `dir` receives scratch files.
pub fn determinism(cfg: &WorkbenchConfig, dir: &Path) -> Criterion {
    const NAME: &str = "determinism and round-trip";
    let run = || -> Result<Vec<String>, Box<dyn std::error::Error>> {
        let mut checks = Vec::new();
        let small = WorkbenchConfig {
            grid: crate::config::GridConfig { nodes: 16, half_extent: 7.5 },
            ..cfg.clone()
        };
        let p = params_for_pattern(PatternId::P);
        let a = solve(&p, &small, 3)?;
        let b = solve(&p, &small, 3)?;
        checks.push(("pattern", a == b));

        let f1 = dir.join("det_a.csv");
        let f2 = dir.join("det_b.csv");
        write_pattern(&f1, &a)?;
        let back = read_pattern(&f1)?;
        write_pattern(&f2, &back)?;
        checks.push(("csv round-trip", std::fs::read(&f1)? == std::fs::read(&f2)? && back.u() == a.u() && back.v() == a.v()));
        checks.push(("csv text", pattern_to_csv(&b) == std::fs::read_to_string(&f1)?));

        let train = TrainConfig { layers: vec![2, 8, 8, 2], epochs: 3, history_every: 1, ..cfg.train.clone() };
        let r1 = train_inverse(&a, &p, ParamSet::C, &train, 11)?;
        let mut r2 = train_inverse(&a, &p, ParamSet::C, &train, 11)?;
        r2.wall_time_s = r1.wall_time_s;
        checks.push(("inference run", r1 == r2));
        write_json(&dir.join("det_run_a.json"), &r1)?;
        write_json(&dir.join("det_run_b.json"), &r2)?;
        checks.push(("run file", std::fs::read(dir.join("det_run_a.json"))? == std::fs::read(dir.join("det_run_b.json"))?));
        Ok(checks.into_iter().map(|(n, ok)| format!("{n} {}", if ok { "identical" } else { "DIFFERS" })).collect())
    };
    match run() {
        Ok(parts) => Criterion::new(9, NAME, parts.iter().all(|p| !p.contains("DIFFERS")), parts.join(", ")),
        Err(e) => Criterion::failed(9, NAME, e),
    }
}

/// Independent quadratic-time evaluation of the three loss terms: single
/// point forward passes, and a linear scan to match each data point with
/// its target.
pub fn brute_force_loss(net: &Mlp, p: &RdParams, pattern: &Pattern, sets: &PointSets, w_f: f64) -> [f64; 4] {
    let g = pattern.grid();
    let h = sets.stencil_h;
    let res = |x: f64, y: f64| {
        let (u, v) = net.forward(x, y);
        let around = [net.forward(x + h, y), net.forward(x - h, y), net.forward(x, y + h), net.forward(x, y - h)];
        let lu = (around.iter().map(|a| a.0).sum::<f64>() - 4.0 * u) / (h * h);
        let lv = (around.iter().map(|a| a.1).sum::<f64>() - 4.0 * v) / (h * h);
        reaction_rhs(u, v, lu, lv, p)
    };
    let mut sq = 0.0;
    for d in &sets.data {
        let i = (0..g.len()).find(|&i| g.coords(i) == (d.x, d.y)).expect("data point on the grid");
        let (u, v) = net.forward(d.x, d.y);
        sq += (u - pattern.u()[i]).powi(2) + (v - pattern.v()[i]).powi(2);
    }
    let mse_h = sq / (2 * sets.data.len()) as f64;
    let mean_res = |pts: &[[f64; 2]]| {
        pts.iter().map(|c| {
            let (a, b) = res(c[0], c[1]);
            a * a + b * b
        }).sum::<f64>() / pts.len() as f64
    };
    let mse_f = mean_res(&sets.collocation);
    let mse_bc = mean_res(&sets.boundary);
    [mse_h, mse_f, mse_bc, mse_h + w_f * mse_f + mse_bc]
}

/// Criterion 10: total = mse_h + 10 mse_f + mse_bc, and every term agrees
/// with [`brute_force_loss`] on a 5x5 instance.
pub fn loss_decomposition() -> Criterion {
    const NAME: &str = "loss decomposition";
    let mut worst_sum = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for seed in 0..4u64 {
        let pattern = seed_fields(GridSpec::square(5, 2.0).unwrap(), 0.4, seed);
        let sets = match build_point_sets(&pattern, &PointConfig { n_bc: 30, ..Default::default() }, seed) {
            Ok(s) => s,
            Err(e) => return Criterion::failed(10, NAME, e),
        };
        let net = Mlp::new(&[2, 8, 8, 2], 2.0, seed).expect("valid layout");
        let p = RdParams::new(0.3 + 0.1 * seed as f64, 1.5, 0.8, -0.7, 2.0, 0.1).expect("valid params");
        let ts = TrainableSet::new(net.clone(), p, ParamMask::default());
        let b = match loss_value(&ts, &sets, &FullBatch::new(&sets).as_batch(), 10.0) {
            Ok(b) => b,
            Err(e) => return Criterion::failed(10, NAME, e),
        };
        worst_sum = worst_sum.max((b.total - (b.mse_h + 10.0 * b.mse_f + b.mse_bc)).abs() / b.total);
        let oracle = brute_force_loss(&net, &p, &pattern, &sets, 10.0);
        for (ours, theirs) in [b.mse_h, b.mse_f, b.mse_bc, b.total].into_iter().zip(oracle) {
            worst_oracle = worst_oracle.max((ours - theirs).abs() / theirs.abs().max(1e-300));
        }
    }
    Criterion::new(
        10,
        NAME,
        worst_sum <= 1e-12 && worst_oracle <= 1e-12,
        format!("recombination error {worst_sum:.1e}, brute-force disagreement {worst_oracle:.1e} (need <= 1e-12)"),
    )
}

/// Everything produced by a full desk run.
pub struct DeskOutcome {
    pub criteria: Vec<Criterion>,
    pub cells: Vec<CellResult>,
    pub validation: Option<ValidationReport>,
    pub forward: ForwardRuns,
}

/// Runs every gate in order, reporting each result through `report` as soon
/// as it is known. Training cells use the desk budget.
pub fn run_desk(cfg: &WorkbenchConfig, scratch: &Path, mut report: impl FnMut(&Criterion)) -> DeskOutcome {
    let mut criteria = Vec::new();
    let mut push = |c: Criterion, all: &mut Vec<Criterion>| {
        report(&c);
        all.push(c);
    };
    let (c1, forward) = forward_modes(cfg);
    push(c1, &mut criteria);
    push(magnitude(&forward), &mut criteria);
    push(gradient_oracle(), &mut criteria);
    push(steady_residual(&forward, &cfg.solver), &mut criteria);
    push(determinism(cfg, scratch), &mut criteria);
    push(loss_decomposition(), &mut criteria);

    let train = TrainConfig { epochs: cfg.desk.epochs, ..cfg.train.clone() };
    let mut cells: Vec<CellResult> = Vec::new();
    let cell = |id: PatternId, set: ParamSet, cells: &mut Vec<CellResult>| -> Result<usize, String> {
        let pattern = forward.get(id).ok_or(format!("pattern {id} unavailable"))?;
        log::info!("training set {set} on pattern {id}");
        let c = run_cell(pattern, id, set, &train, cfg.desk.restarts, cfg.seed).map_err(|e| e.to_string())?;
        cells.push(c);
        Ok(cells.len() - 1)
    };
    let a = cell(PatternId::P, ParamSet::A, &mut cells);
    let b = cell(PatternId::P, ParamSet::B, &mut cells);
    match (&a, &b) {
        (Ok(ia), Ok(ib)) => {
            push(baseline(&cells[*ia], &cells[*ib]), &mut criteria);
            push(loss_trend(&cells[*ia]), &mut criteria);
        }
        (Err(e), _) | (_, Err(e)) => push(Criterion::failed(5, "baseline sets A/B on P", e), &mut criteria),
    }
    match cell(PatternId::P, ParamSet::D, &mut cells) {
        Ok(i) => push(set_d(&cells[i]), &mut criteria),
        Err(e) => push(Criterion::failed(6, "set D on P", e), &mut criteria),
    }
    let mut validation = None;
    match (cell(PatternId::P, ParamSet::C, &mut cells), &a, forward.get(PatternId::P)) {
        (Ok(ic), Ok(ia), Some(p)) => {
            let (c7, v) = alternative_solution(&cells[ic], &cells[*ia], p, cfg);
            validation = v;
            push(c7, &mut criteria);
        }
        (Err(e), _, _) => push(Criterion::failed(7, "set C alternative solution", e), &mut criteria),
        _ => push(Criterion::failed(7, "set C alternative solution", "set A baseline unavailable"), &mut criteria),
    }
    match (cell(PatternId::Q, ParamSet::E, &mut cells), forward.get(PatternId::Q)) {
        (Ok(ie), Some(q)) => push(r1_scaling(&cells[ie], q, cfg), &mut criteria),
        (Err(e), _) => push(Criterion::failed(8, "r1 scaling on Q", e), &mut criteria),
        (_, None) => push(Criterion::failed(8, "r1 scaling on Q", "pattern Q unavailable"), &mut criteria),
    }
    criteria.sort_by_key(|c| if c.id == 0 { u8::MAX } else { c.id });
    DeskOutcome { criteria, cells, validation, forward }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cheap_gates_pass() {
        assert!(gradient_oracle().pass);
        let c = loss_decomposition();
        assert!(c.pass, "{c}");
    }

    #[test]
    fn display_line() {
        let c = Criterion::new(3, "x", true, "ok".into());
        assert_eq!(c.to_string(), "[PASS] criterion  3 x: ok");
    }
}
