//! Pattern metrics: norms, the radially averaged power spectrum and its
//! peak, and the regenerate-and-compare check for inferred parameters.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridSpec, Pattern};
use crate::params::RdParams;
use crate::solver::{run_to_steady_state, SolverConfig, SolverError, StopReason};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("fields have different lengths ({a} and {b})")]
    Shape { a: usize, b: usize },
    #[error("reference field has zero norm")]
    ZeroReference,
    #[error("field is constant, no spectral peak")]
    NoPeak,
    #[error("field has {got} values but the grid has {expected} nodes")]
    Grid { expected: usize, got: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Unnormalized Euclidean norm over all nodes.
pub fn l2_norm(field: &[f64]) -> f64 {
    field.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `| |a| - |b| | / |b|`: compares magnitudes only, so patterns with
/// differently oriented stripes still compare as close.
pub fn rel_norm_diff(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::Shape { a: a.len(), b: b.len() });
    }
    let nb = l2_norm(b);
    if nb == 0.0 {
        return Err(AnalysisError::ZeroReference);
    }
    Ok((l2_norm(a) - nb).abs() / nb)
}

/// Radially averaged power spectrum; `power[i]` is the mean power of the
/// DFT coefficients whose wavenumber rounds to `k[i] = i * dk`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub dk: f64,
    pub k: Vec<f64>,
    pub power: Vec<f64>,
}

/// Signed DFT frequency index of bin `i` of an `n`-point transform.
fn freq_index(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

pub fn radial_spectrum(field: &[f64], grid: &GridSpec) -> Result<Spectrum, AnalysisError> {
    let (nx, ny) = (grid.nx(), grid.ny());
    if field.len() != grid.len() {
        return Err(AnalysisError::Grid { expected: grid.len(), got: field.len() });
    }
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let mut data: Vec<Complex<f64>> = field.iter().map(|&x| Complex::new(x - mean, 0.0)).collect();

    let mut planner = FftPlanner::new();
    let fft_x = planner.plan_fft_forward(nx);
    fft_x.process(&mut data);
    // columns: gather, transform, scatter
    let fft_y = planner.plan_fft_forward(ny);
    let mut col = vec![Complex::new(0.0, 0.0); ny];
    for ix in 0..nx {
        for iy in 0..ny {
            col[iy] = data[iy * nx + ix];
        }
        fft_y.process(&mut col);
        for iy in 0..ny {
            data[iy * nx + ix] = col[iy];
        }
    }

    let step_x = 2.0 * std::f64::consts::PI / (nx as f64 * grid.dx());
    let step_y = 2.0 * std::f64::consts::PI / (ny as f64 * grid.dy());
    let dk = step_x.min(step_y);
    let k_max = ((nx / 2) as f64 * step_x).hypot((ny / 2) as f64 * step_y);
    let n_bins = (k_max / dk).round() as usize + 1;
    let mut sum = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for iy in 0..ny {
        let ky = freq_index(iy, ny) * step_y;
        for ix in 0..nx {
            let kx = freq_index(ix, nx) * step_x;
            let b = (kx.hypot(ky) / dk).round() as usize;
            sum[b] += data[iy * nx + ix].norm_sqr();
            count[b] += 1;
        }
    }
    let power = sum.iter().zip(&count).map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let k = (0..n_bins).map(|i| i as f64 * dk).collect();
    Ok(Spectrum { dk, k, power })
}

impl Spectrum {
    /// Wavenumber of the strongest non-zero bin, refined by a parabola
    /// through it and its neighbours.
    pub fn peak(&self) -> Result<f64, AnalysisError> {
        let p = &self.power;
        let total: f64 = p.iter().skip(1).sum();
        if !(total > 0.0) {
            return Err(AnalysisError::NoPeak);
        }
        let b = (1..p.len()).max_by(|&i, &j| p[i].total_cmp(&p[j])).ok_or(AnalysisError::NoPeak)?;
        let mut offset = 0.0;
        if b >= 2 && b + 1 < p.len() {
            let denom = p[b - 1] - 2.0 * p[b] + p[b + 1];
            if denom < 0.0 {
                offset = (0.5 * (p[b - 1] - p[b + 1]) / denom).clamp(-0.5, 0.5);
            }
        }
        Ok((b as f64 + offset) * self.dk)
    }

    /// Two-column CSV `k,power`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,power\n");
        for (k, p) in self.k.iter().zip(&self.power) {
            s.push_str(&format!("{k:.16e},{p:.16e}\n"));
        }
        s
    }
}

/// Dominant radial wavenumber of the mean-removed `u` field.
pub fn dominant_mode(pattern: &Pattern) -> Result<f64, AnalysisError> {
    dominant_mode_of(pattern.u(), pattern.grid())
}

pub fn dominant_mode_of(field: &[f64], grid: &GridSpec) -> Result<f64, AnalysisError> {
    let (lo, hi) = min_max(field);
    if !(hi - lo > 1e-14 * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE)) {
        return Err(AnalysisError::NoPeak);
    }
    radial_spectrum(field, grid)?.peak()
}

fn min_max(field: &[f64]) -> (f64, f64) {
    field.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternStats {
    pub l2_u: f64,
    pub l2_v: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub min_v: f64,
    pub max_v: f64,
    pub dominant_k: Option<f64>,
    pub spectrum: Spectrum,
}

impl PatternStats {
    pub fn of(pattern: &Pattern) -> Result<Self, AnalysisError> {
        let (min_u, max_u) = min_max(pattern.u());
        let (min_v, max_v) = min_max(pattern.v());
        Ok(PatternStats {
            l2_u: l2_norm(pattern.u()),
            l2_v: l2_norm(pattern.v()),
            min_u,
            max_u,
            min_v,
            max_v,
            dominant_k: dominant_mode(pattern).ok(),
            spectrum: radial_spectrum(pattern.u(), pattern.grid())?,
        })
    }

    pub fn max_abs_u(&self) -> f64 {
        self.min_u.abs().max(self.max_u.abs())
    }
}

/// Default bound on the relative norm differences for a passing validation.
pub const DEFAULT_NORM_THRESHOLD: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub inferred: RdParams,
    pub rng_seed: u64,
    pub threshold: f64,
    pub rel_diff_u: f64,
    pub rel_diff_v: f64,
    pub k_reference: f64,
    pub k_generated: Option<f64>,
    pub bin_width: f64,
    pub mode_match: bool,
    pub reference_range: [f64; 4],
    pub generated_range: [f64; 4],
    pub solver_steps: u64,
    pub converged: bool,
    pub pass: bool,
}

/// Regenerates a pattern from `inferred` (seeded by `solver_cfg.rng_seed`)
/// on the reference grid and compares it with `reference`. Passes when both
/// norm differences are at most `threshold` and the dominant modes lie
/// within one spectral bin. A solver that runs out of steps still yields a
/// report, flagged as not converged.
pub fn validate_inferred(
    inferred: &RdParams,
    reference: &Pattern,
    solver_cfg: &SolverConfig,
    threshold: f64,
) -> Result<(ValidationReport, Pattern), AnalysisError> {
    let generated = match run_to_steady_state(inferred, *reference.grid(), solver_cfg) {
        Ok(p) => p,
        Err(SolverError::NotConverged { pattern, steps, max_rate }) => {
            log::warn!("validation run stopped after {steps} steps with rate {max_rate:e}");
            *pattern
        }
        Err(e) => return Err(e.into()),
    };
    let report = compare(inferred, reference, &generated, solver_cfg.rng_seed, threshold)?;
    Ok((report, generated))
}

/// The comparison half of [`validate_inferred`], for an already generated pattern.
pub fn compare(
    inferred: &RdParams,
    reference: &Pattern,
    generated: &Pattern,
    rng_seed: u64,
    threshold: f64,
) -> Result<ValidationReport, AnalysisError> {
    let rel_diff_u = rel_norm_diff(generated.u(), reference.u())?;
    let rel_diff_v = rel_norm_diff(generated.v(), reference.v())?;
    let k_reference = dominant_mode(reference)?;
    let k_generated = dominant_mode(generated).ok();
    let bin_width = radial_spectrum(reference.u(), reference.grid())?.dk;
    let mode_match = k_generated.is_some_and(|k| (k - k_reference).abs() <= bin_width);
    let range = |p: &Pattern| {
        let (a, b) = min_max(p.u());
        let (c, d) = min_max(p.v());
        [a, b, c, d]
    };
    let prov = generated.provenance.as_ref();
    let pass = rel_diff_u <= threshold && rel_diff_v <= threshold && mode_match;
    Ok(ValidationReport {
        inferred: *inferred,
        rng_seed,
        threshold,
        rel_diff_u,
        rel_diff_v,
        k_reference,
        k_generated,
        bin_width,
        mode_match,
        reference_range: range(reference),
        generated_range: range(generated),
        solver_steps: prov.map_or(0, |p| p.steps),
        converged: prov.is_some_and(|p| p.stop == StopReason::Converged),
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(grid: &GridSpec, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..grid.len()).map(|i| {
            let (x, y) = grid.coords(i);
            f(x, y)
        }).collect()
    }

    fn transpose(field: &[f64], n: usize) -> Vec<f64> {
        (0..n * n).map(|i| field[(i % n) * n + i / n]).collect()
    }

    #[test]
    fn norms() {
        assert_eq!(l2_norm(&[0.0; 9]), 0.0);
        let mut one_hot = vec![0.0; 16];
        one_hot[5] = 3.0;
        assert_eq!(l2_norm(&one_hot), 3.0);
        let f = [0.5, -1.25, 2.0, 0.125];
        assert_eq!(l2_norm(&f), (0.25f64 + 1.5625 + 4.0 + 0.015625).sqrt());
        assert_eq!(rel_norm_diff(&f, &f).unwrap(), 0.0);
        let twice: Vec<f64> = f.iter().map(|x| 2.0 * x).collect();
        assert_eq!(rel_norm_diff(&twice, &f).unwrap(), 1.0);
        assert!(matches!(rel_norm_diff(&f, &[0.0; 4]), Err(AnalysisError::ZeroReference)));
        assert!(matches!(rel_norm_diff(&f, &[1.0; 3]), Err(AnalysisError::Shape { .. })));
    }

    #[test]
    fn synthetic_stripes() {
        let g = GridSpec::default();
        for (k, along_x) in [(0.42, true), (0.6, false), (0.25, true)] {
            let f = sample(&g, |x, y| if along_x { (k * x).sin() } else { (k * y).sin() });
            let spec = radial_spectrum(&f, &g).unwrap();
            let est = spec.peak().unwrap();
            assert!((est - k).abs() <= spec.dk, "k={k} est={est} dk={}", spec.dk);
        }
    }

    #[test]
    fn mode_invariances() {
        let g = GridSpec::default();
        let f = sample(&g, |x, y| (0.42 * x + 0.1 * y).sin() + 0.3 * (0.2 * y).cos());
        let k = dominant_mode_of(&f, &g).unwrap();
        assert_eq!(dominant_mode_of(&transpose(&f, 50), &g).unwrap(), k);
        let shifted: Vec<f64> = f.iter().map(|x| x + 7.0).collect();
        assert!((dominant_mode_of(&shifted, &g).unwrap() - k).abs() < 1e-12);
        let doubled: Vec<f64> = f.iter().map(|x| 2.0 * x).collect();
        assert!((dominant_mode_of(&doubled, &g).unwrap() - k).abs() < 1e-12);
        assert!(matches!(dominant_mode_of(&[1.5; 2500], &g), Err(AnalysisError::NoPeak)));
    }

    #[test]
    fn transposed_stripes_have_equal_norm() {
        let g = GridSpec::default();
        let f = sample(&g, |x, _| (0.42 * x).sin());
        assert!(rel_norm_diff(&transpose(&f, 50), &f).unwrap() < 1e-14);
    }

    #[test]
    fn spectrum_csv() {
        let g = GridSpec::square(4, 1.0).unwrap();
        let s = radial_spectrum(&sample(&g, |x, _| x), &g).unwrap();
        let csv = s.to_csv();
        assert!(csv.starts_with("k,power\n"));
        assert_eq!(csv.lines().count(), s.k.len() + 1);
    }
}
