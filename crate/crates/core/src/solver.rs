//! Explicit-Euler time stepping of the reaction-diffusion system with a
//! 5-point central-difference Laplacian, run until the time derivatives vanish.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, GridSpec, Pattern, Provenance};
use crate::params::{reaction_rhs, RdParams};

/// Fraction of the explicit diffusion limit used by [`stable_dt`].
pub const DT_SAFETY: f64 = 0.2;
/// Upper bound on the step returned by [`stable_dt`]. Also the fallback when
/// both diffusivities vanish.
pub const DEFAULT_DT_CAP: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("non-finite state at step {step}")]
    Diverged { step: u64 },
    #[error("time step {dt} exceeds the stability bound {bound}")]
    UnstableDt { dt: f64, bound: f64 },
    #[error("invalid solver setting: {0}")]
    Config(String),
    #[error("no steady state after {steps} steps (last max rate {max_rate:e})")]
    NotConverged { steps: u64, max_rate: f64, pattern: Box<Pattern> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Mirror ghost nodes, zero normal derivative.
    #[default]
    ZeroFlux,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    StepBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Explicit time step. `None` picks [`stable_dt`] for the parameters at hand.
    pub dt: Option<f64>,
    pub max_steps: u64,
    pub steady_tol: f64,
    pub seed_amplitude: f64,
    pub rng_seed: u64,
    pub boundary: Boundary,
    pub progress_every: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: None,
            max_steps: 2_000_000,
            steady_tol: 1e-6,
            seed_amplitude: 0.05,
            rng_seed: 0,
            boundary: Boundary::ZeroFlux,
            progress_every: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn with_seed(mut self, rng_seed: u64) -> Self {
        self.rng_seed = rng_seed;
        self
    }

    /// Checks the settings and resolves the time step for `p` on `grid`.
    pub fn resolve_dt(&self, p: &RdParams, grid: &GridSpec) -> Result<f64, SolverError> {
        if !(self.steady_tol > 0.0) {
            return Err(SolverError::Config(format!("steady_tol must be > 0, got {}", self.steady_tol)));
        }
        if !(self.seed_amplitude > 0.0) {
            return Err(SolverError::Config(format!(
                "seed_amplitude must be > 0, got {}",
                self.seed_amplitude
            )));
        }
        let bound = stable_dt(p, grid);
        match self.dt {
            None => Ok(bound),
            Some(dt) if !(dt > 0.0) => Err(SolverError::Config(format!("dt must be > 0, got {dt}"))),
            Some(dt) if dt > bound => Err(SolverError::UnstableDt { dt, bound }),
            Some(dt) => Ok(dt),
        }
    }
}

/// Uniform noise in `[-amplitude, amplitude]` for both fields; `u` is drawn
/// first, then `v`.
pub fn seed_fields(grid: GridSpec, amplitude: f64, rng_seed: u64) -> Pattern {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = grid.len();
    let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-amplitude..=amplitude)).collect();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-amplitude..=amplitude)).collect();
    Pattern::new(grid, u, v).expect("seeded fields match the grid")
}

#[inline]
fn neighbours(i: usize, n: usize, boundary: Boundary) -> (usize, usize) {
    match boundary {
        Boundary::ZeroFlux => {
            let lo = if i == 0 { 1 } else { i - 1 };
            let hi = if i + 1 == n { n - 2 } else { i + 1 };
            (lo, hi)
        }
        Boundary::Periodic => ((i + n - 1) % n, (i + 1) % n),
    }
}

fn laplacian_into(field: &[f64], grid: &GridSpec, boundary: Boundary, out: &mut [f64]) {
    let (nx, ny) = (grid.nx(), grid.ny());
    let (idx2, idy2) = (1.0 / (grid.dx() * grid.dx()), 1.0 / (grid.dy() * grid.dy()));
    for iy in 0..ny {
        let (ys, yn) = neighbours(iy, ny, boundary);
        let row = iy * nx;
        for ix in 0..nx {
            let (xw, xe) = neighbours(ix, nx, boundary);
            let c = field[row + ix];
            out[row + ix] = (field[row + xe] + field[row + xw] - 2.0 * c) * idx2
                + (field[yn * nx + ix] + field[ys * nx + ix] - 2.0 * c) * idy2;
        }
    }
}

/// Discrete 5-point Laplacian. Edge nodes take their missing neighbour from
/// the mirror image (zero flux) or from the opposite edge (periodic).
pub fn laplacian(field: &[f64], grid: &GridSpec, boundary: Boundary) -> Result<Vec<f64>, GridError> {
    grid.check_field(field)?;
    let mut out = vec![0.0; field.len()];
    laplacian_into(field, grid, boundary, &mut out);
    Ok(out)
}

/// Largest explicit step considered safe for the diffusion terms, capped at
/// [`DEFAULT_DT_CAP`].
pub fn stable_dt(p: &RdParams, grid: &GridSpec) -> f64 {
    stable_dt_with_cap(p, grid, DEFAULT_DT_CAP)
}

pub fn stable_dt_with_cap(p: &RdParams, grid: &GridSpec, cap: f64) -> f64 {
    let h = grid.dx().min(grid.dy());
    let diff = p.diffusion_u().abs().max(p.diffusion_v().abs());
    if diff == 0.0 {
        return cap;
    }
    (DT_SAFETY * h * h / (4.0 * diff)).min(cap)
}

/// Time derivatives of both fields at every node.
pub fn time_derivatives(state: &Pattern, p: &RdParams, boundary: Boundary) -> (Vec<f64>, Vec<f64>) {
    let mut stepper = Stepper::new(state.grid().len());
    stepper.measure(state, p, boundary);
    (stepper.du, stepper.dv)
}

/// Root mean square of the steady-state residual over all `2 * n` scalar
/// components, using the discrete Laplacian of the stored fields.
pub fn steady_residual_rms(state: &Pattern, p: &RdParams, boundary: Boundary) -> f64 {
    let (du, dv) = time_derivatives(state, p, boundary);
    let sq: f64 = du.iter().chain(&dv).map(|x| x * x).sum();
    (sq / (du.len() + dv.len()) as f64).sqrt()
}

/// Reusable buffers holding the time derivatives of one grid.
struct Stepper {
    du: Vec<f64>,
    dv: Vec<f64>,
}

impl Stepper {
    fn new(n: usize) -> Self {
        Stepper { du: vec![0.0; n], dv: vec![0.0; n] }
    }

    /// Fills the derivative buffers for `state` and returns their max-norm.
    /// A NaN anywhere makes the result NaN.
    fn measure(&mut self, state: &Pattern, p: &RdParams, boundary: Boundary) -> f64 {
        let grid = state.grid();
        laplacian_into(state.u(), grid, boundary, &mut self.du);
        laplacian_into(state.v(), grid, boundary, &mut self.dv);
        let (u, v) = (state.u(), state.v());
        let mut max_rate = 0.0f64;
        for i in 0..grid.len() {
            let (fu, fv) = reaction_rhs(u[i], v[i], self.du[i], self.dv[i], p);
            self.du[i] = fu;
            self.dv[i] = fv;
            let r = fu.abs().max(fv.abs());
            if r > max_rate || r.is_nan() {
                max_rate = r;
            }
        }
        max_rate
    }

    fn apply(&self, state: &mut Pattern, dt: f64) {
        let (u, v) = state.fields_mut();
        for (x, d) in u.iter_mut().zip(&self.du) {
            *x += dt * d;
        }
        for (x, d) in v.iter_mut().zip(&self.dv) {
            *x += dt * d;
        }
    }
}

fn all_finite(p: &Pattern) -> bool {
    p.u().iter().chain(p.v()).all(|x| x.is_finite())
}

/// One explicit Euler step. Returns the new state and the max-norm of the
/// time derivatives evaluated on `state`. `step_index` only labels the
/// divergence error.
pub fn step_euler(
    state: &Pattern,
    p: &RdParams,
    dt: f64,
    boundary: Boundary,
    step_index: u64,
) -> Result<(Pattern, f64), SolverError> {
    let mut stepper = Stepper::new(state.grid().len());
    let max_rate = stepper.measure(state, p, boundary);
    let mut next = state.clone();
    next.provenance = None;
    stepper.apply(&mut next, dt);
    if !max_rate.is_finite() || !all_finite(&next) {
        return Err(SolverError::Diverged { step: step_index });
    }
    Ok((next, max_rate))
}

/// Seeds the fields and integrates until the max-norm of the time
/// derivatives drops below `cfg.steady_tol`. The returned state is the one
/// whose derivatives were measured below tolerance.
pub fn run_to_steady_state(p: &RdParams, grid: GridSpec, cfg: &SolverConfig) -> Result<Pattern, SolverError> {
    let dt = cfg.resolve_dt(p, &grid)?;
    let mut state = seed_fields(grid, cfg.seed_amplitude, cfg.rng_seed);
    let mut stepper = Stepper::new(grid.len());
    let mut steps = 0u64;
    let (stop, max_rate) = loop {
        let rate = stepper.measure(&state, p, cfg.boundary);
        if !rate.is_finite() {
            return Err(SolverError::Diverged { step: steps });
        }
        if rate < cfg.steady_tol {
            break (StopReason::Converged, rate);
        }
        if steps == cfg.max_steps {
            break (StopReason::StepBudget, rate);
        }
        stepper.apply(&mut state, dt);
        steps += 1;
        if cfg.progress_every > 0 && steps % cfg.progress_every == 0 {
            log::debug!("step {steps}: max rate {rate:.3e}");
        }
    };
    let provenance = Provenance {
        params: *p,
        rng_seed: cfg.rng_seed,
        seed_amplitude: cfg.seed_amplitude,
        boundary: cfg.boundary,
        dt,
        steady_tol: cfg.steady_tol,
        max_steps: cfg.max_steps,
        steps,
        final_max_rate: max_rate,
        stop,
    };
    let pattern = state.with_provenance(provenance);
    match stop {
        StopReason::Converged => {
            log::info!("steady state after {steps} steps (max rate {max_rate:.3e})");
            Ok(pattern)
        }
        StopReason::StepBudget => Err(SolverError::NotConverged { steps, max_rate, pattern: Box::new(pattern) }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{params_for_pattern, PatternId};

    fn sample(grid: &GridSpec, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..grid.len()).map(|i| {
            let (x, y) = grid.coords(i);
            f(x, y)
        }).collect()
    }

    fn interior(grid: &GridSpec) -> impl Iterator<Item = usize> + '_ {
        (0..grid.len()).filter(|&i| !grid.is_edge(i % grid.nx(), i / grid.nx()))
    }

    #[test]
    fn seeding_is_deterministic_and_bounded() {
        let g = GridSpec::default();
        let a = seed_fields(g, 0.05, 7);
        assert_eq!(a, seed_fields(g, 0.05, 7));
        assert!(a.u().iter().chain(a.v()).all(|x| x.abs() <= 0.05));
        let b = seed_fields(g, 0.05, 8);
        assert!(a.u().iter().zip(b.u()).any(|(x, y)| x != y));
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        let g = GridSpec::square(7, 3.0).unwrap();
        for b in [Boundary::ZeroFlux, Boundary::Periodic] {
            let l = laplacian(&vec![2.5; g.len()], &g, b).unwrap();
            assert!(l.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn laplacian_exact_on_low_order_polynomials() {
        let g = GridSpec::new(9, 11, -2.0, 3.0, -1.0, 4.0).unwrap();
        let lin = laplacian(&sample(&g, |x, _| x), &g, Boundary::ZeroFlux).unwrap();
        let quad = laplacian(&sample(&g, |x, y| x * x + y * y), &g, Boundary::ZeroFlux).unwrap();
        for i in interior(&g) {
            assert!(lin[i].abs() < 1e-12);
            assert!((quad[i] - 4.0).abs() < 1e-10, "{}", quad[i]);
        }
    }

    #[test]
    fn laplacian_shape_error() {
        let g = GridSpec::square(5, 1.0).unwrap();
        assert!(matches!(laplacian(&[0.0; 24], &g, Boundary::ZeroFlux), Err(GridError::Shape { .. })));
    }

    #[test]
    fn laplacian_converges_second_order() {
        let f = |x: f64, y: f64| (0.7 * x).sin() * (0.4 * y).cos();
        let exact = |x: f64, y: f64| -(0.49 + 0.16) * f(x, y);
        let mut errs = vec![];
        let mut hs = vec![];
        for n in [21, 41, 81, 161] {
            let g = GridSpec::square(n, 2.0).unwrap();
            let l = laplacian(&sample(&g, f), &g, Boundary::ZeroFlux).unwrap();
            let e = interior(&g)
                .map(|i| {
                    let (x, y) = g.coords(i);
                    (l[i] - exact(x, y)).abs()
                })
                .fold(0.0, f64::max);
            errs.push(e);
            hs.push(g.dx());
        }
        for w in 0..errs.len() - 1 {
            let slope = (errs[w] / errs[w + 1]).ln() / (hs[w] / hs[w + 1]).ln();
            assert!((1.8..=2.2).contains(&slope), "slope {slope}");
        }
    }

    #[test]
    fn zero_flux_laplacian_telescopes() {
        // The mirror stencil is a symmetric operator only under the
        // trapezoid weights (1/2 on edges, 1/4 on corners); with those the
        // weighted sum of the Laplacian vanishes for any field.
        let g = GridSpec::new(13, 9, -3.0, 3.0, -2.0, 2.0).unwrap();
        let field = seed_fields(g, 1.0, 3).u().to_vec();
        let l = laplacian(&field, &g, Boundary::ZeroFlux).unwrap();
        let weight = |i: usize| {
            let (ix, iy) = (i % g.nx(), i / g.nx());
            let wx = if ix == 0 || ix + 1 == g.nx() { 0.5 } else { 1.0 };
            let wy = if iy == 0 || iy + 1 == g.ny() { 0.5 } else { 1.0 };
            wx * wy
        };
        let total: f64 = l.iter().enumerate().map(|(i, x)| weight(i) * x).sum();
        let norm = field.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(total.abs() < 1e-10 * norm, "{total}");
        let periodic = laplacian(&field, &g, Boundary::Periodic).unwrap();
        assert!(periodic.iter().sum::<f64>().abs() < 1e-10 * norm);
    }

    #[test]
    fn stable_dt_formula() {
        let g = GridSpec::default();
        let p = params_for_pattern(PatternId::P);
        let dx = 200.0 / 49.0;
        assert!((stable_dt(&p, &g) - 0.2 * dx * dx / 8.0).abs() < 1e-15);
        let fine = GridSpec::square(99, 100.0).unwrap();
        let ratio = stable_dt(&p, &g) / stable_dt(&p, &fine);
        assert!((ratio - 4.0).abs() < 1e-12);
        let p2 = p.with(crate::params::ParamId::D2, 4.0).unwrap();
        assert!((stable_dt(&p, &g) / stable_dt(&p2, &g) - 2.0).abs() < 1e-12);
        let still = crate::params::RdParams::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0).unwrap();
        assert_eq!(stable_dt(&still, &g), DEFAULT_DT_CAP);
        assert_eq!(stable_dt_with_cap(&still, &g, 0.3), 0.3);
    }

    #[test]
    fn zero_state_is_fixed_point() {
        let g = GridSpec::square(6, 5.0).unwrap();
        for id in PatternId::ALL {
            let (next, rate) = step_euler(&Pattern::zeros(g), &params_for_pattern(id), 0.1, Boundary::ZeroFlux, 0).unwrap();
            assert_eq!(rate, 0.0);
            assert!(next.u().iter().chain(next.v()).all(|&x| x == 0.0));
        }
    }

    #[test]
    fn one_step_matches_direct_recomputation() {
        let g = GridSpec::square(6, 5.0).unwrap();
        let p = params_for_pattern(PatternId::R);
        let s = seed_fields(g, 0.5, 11);
        let dt = 0.05;
        let (next, rate) = step_euler(&s, &p, dt, Boundary::ZeroFlux, 0).unwrap();
        let n = g.nx();
        let at = |f: &[f64], ix: isize, iy: isize| {
            let m = |i: isize| -> usize {
                if i < 0 { 1 } else if i as usize >= n { n - 2 } else { i as usize }
            };
            f[m(iy) * n + m(ix)]
        };
        let mut expected_rate = 0.0f64;
        for iy in 0..n as isize {
            for ix in 0..n as isize {
                let lap = |f: &[f64]| {
                    (at(f, ix + 1, iy) + at(f, ix - 1, iy) + at(f, ix, iy + 1) + at(f, ix, iy - 1) - 4.0 * at(f, ix, iy))
                        / (g.dx() * g.dx())
                };
                let (u, v) = (at(s.u(), ix, iy), at(s.v(), ix, iy));
                let fu = p.d1() * p.d2() * lap(s.u()) + p.alpha() * u * (1.0 - p.r1() * v * v) + v * (1.0 - p.r2() * u);
                let fv = p.d2() * lap(s.v()) + p.beta() * v + p.alpha() * p.r1() * u * v * v + u * (-p.alpha() + p.r2() * v);
                let i = iy as usize * n + ix as usize;
                assert!((next.u()[i] - (u + dt * fu)).abs() < 1e-12);
                assert!((next.v()[i] - (v + dt * fv)).abs() < 1e-12);
                expected_rate = expected_rate.max(fu.abs()).max(fv.abs());
            }
        }
        assert!((rate - expected_rate).abs() < 1e-12);
    }

    #[test]
    fn oversized_step_diverges() {
        let g = GridSpec::default();
        let p = params_for_pattern(PatternId::P);
        let dt = 50.0 * stable_dt(&p, &g);
        let mut s = seed_fields(g, 0.05, 1);
        let mut failed = None;
        for k in 0..10_000 {
            match step_euler(&s, &p, dt, Boundary::ZeroFlux, k) {
                Ok((next, _)) => s = next,
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        assert!(matches!(failed, Some(SolverError::Diverged { .. })));
    }

    #[test]
    fn rejects_unstable_config() {
        let g = GridSpec::default();
        let p = params_for_pattern(PatternId::P);
        let cfg = SolverConfig { dt: Some(10.0), ..SolverConfig::default() };
        assert!(matches!(run_to_steady_state(&p, g, &cfg), Err(SolverError::UnstableDt { .. })));
        let cfg = SolverConfig { steady_tol: 0.0, ..SolverConfig::default() };
        assert!(matches!(run_to_steady_state(&p, g, &cfg), Err(SolverError::Config(_))));
    }

    #[test]
    fn step_budget_reports_last_rate() {
        let g = GridSpec::square(10, 20.0).unwrap();
        let p = params_for_pattern(PatternId::P);
        let cfg = SolverConfig { max_steps: 5, ..SolverConfig::default() };
        match run_to_steady_state(&p, g, &cfg) {
            Err(SolverError::NotConverged { steps, max_rate, pattern }) => {
                assert_eq!(steps, 5);
                assert!(max_rate > cfg.steady_tol);
                assert_eq!(pattern.provenance.unwrap().stop, StopReason::StepBudget);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
