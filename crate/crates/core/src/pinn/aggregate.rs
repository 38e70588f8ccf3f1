use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::Pattern;
use crate::params::{ParamId, RdParams};

use super::train::{train_inverse, InferenceRun, ParamSet, TrainConfig};
use super::PinnError;

/// Restart statistics for one learned parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub id: ParamId,
    pub reference: f64,
    pub mean: f64,
    /// Population variance over the successful runs.
    pub variance: f64,
    /// `100 * |mean - reference| / |reference|`.
    pub error_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub restart_seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub set: ParamSet,
    pub reference: RdParams,
    pub params: Vec<ParamSummary>,
    pub mean_data_loss: f64,
    pub runs: Vec<InferenceRun>,
    pub failed: Vec<FailedRun>,
    /// Seeds of runs lying more than 3 sigma from the other runs in some
    /// learned parameter.
    pub alternative_candidates: Vec<u64>,
}

/// Population mean and variance by the two-pass formula.
pub fn mean_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

fn percent_error(mean: f64, reference: f64) -> f64 {
    100.0 * (mean - reference).abs() / reference.abs()
}

/// Flags run `i` when, for some column, it sits more than 3 standard
/// deviations from the mean of the remaining runs. Needs at least 3 runs.
fn outliers(columns: &[Vec<f64>]) -> Vec<usize> {
    let n = columns.first().map_or(0, Vec::len);
    if n < 3 {
        return Vec::new();
    }
    (0..n)
        .filter(|&i| {
            columns.iter().any(|col| {
                let rest: Vec<f64> = col.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &x)| x).collect();
                let (m, var) = mean_variance(&rest);
                (col[i] - m).abs() > 3.0 * var.sqrt()
            })
        })
        .collect()
}

impl RunAggregate {
    pub fn from_runs(
        set: ParamSet,
        reference: RdParams,
        runs: Vec<InferenceRun>,
        failed: Vec<FailedRun>,
    ) -> Result<Self, PinnError> {
        if runs.is_empty() {
            return Err(PinnError::Config(format!("no successful runs out of {}", failed.len())));
        }
        let columns: Vec<Vec<f64>> =
            set.trainable().iter().map(|&id| runs.iter().map(|r| r.inferred.get(id)).collect()).collect();
        let params = set
            .trainable()
            .iter()
            .zip(&columns)
            .map(|(&id, col)| {
                let (mean, variance) = mean_variance(col);
                let reference = reference.get(id);
                ParamSummary { id, reference, mean, variance, error_pct: percent_error(mean, reference) }
            })
            .collect();
        let losses: Vec<f64> = runs.iter().map(|r| r.final_loss.mse_h).collect();
        let mean_data_loss = mean_variance(&losses).0;
        let alternative_candidates = outliers(&columns).into_iter().map(|i| runs[i].restart_seed).collect();
        Ok(RunAggregate { set, reference, params, mean_data_loss, runs, failed, alternative_candidates })
    }

    pub fn summary(&self, id: ParamId) -> Option<&ParamSummary> {
        self.params.iter().find(|s| s.id == id)
    }

    pub fn best_run(&self) -> &InferenceRun {
        self.runs
            .iter()
            .min_by(|a, b| a.final_loss.mse_h.total_cmp(&b.final_loss.mse_h))
            .expect("aggregate holds at least one run")
    }
}

/// Seeds used for `n` restarts starting from `base`.
pub fn restart_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Runs [`train_inverse`] once per seed, in parallel, and aggregates the
/// successful runs. Failed runs are logged and listed, not fatal.
pub fn multi_restart(
    pattern: &Pattern,
    reference: &RdParams,
    set: ParamSet,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<RunAggregate, PinnError> {
    if seeds.is_empty() {
        return Err(PinnError::Config("at least one restart is required".into()));
    }
    let results: Vec<(u64, Result<InferenceRun, PinnError>)> =
        seeds.par_iter().map(|&s| (s, train_inverse(pattern, reference, set, cfg, s))).collect();
    let mut runs = Vec::new();
    let mut failed = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e @ (PinnError::Config(_) | PinnError::Grid(_))) => return Err(e),
            Err(e) => {
                log::warn!("set {set} restart {seed} failed: {e}");
                failed.push(FailedRun { restart_seed: seed, error: e.to_string() });
            }
        }
    }
    RunAggregate::from_runs(set, *reference, runs, failed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{params_for_pattern, PatternId};
    use crate::pinn::loss::LossBreakdown;
    use crate::pinn::train::StopCause;

    fn mock(seed: u64, p: RdParams, mse_h: f64) -> InferenceRun {
        InferenceRun {
            set: ParamSet::D,
            inferred: p,
            final_loss: LossBreakdown { mse_h, total: mse_h, w_f: 10.0, ..Default::default() },
            restart_seed: seed,
            epochs: 1,
            stop: StopCause::EpochBudget,
            beta_nudges: 0,
            wall_time_s: 0.0,
            history: Vec::new(),
        }
    }

    #[test]
    fn identical_runs_have_zero_variance() {
        let p = params_for_pattern(PatternId::P);
        let runs = (0..8).map(|s| mock(s, p, 1e-5)).collect();
        let agg = RunAggregate::from_runs(ParamSet::D, p, runs, vec![]).unwrap();
        assert_eq!(agg.params.len(), 3);
        for s in &agg.params {
            assert_eq!((s.variance, s.error_pct), (0.0, 0.0));
        }
        assert!(agg.alternative_candidates.is_empty());
        assert!((agg.mean_data_loss - 1e-5).abs() < 1e-20);
    }

    #[test]
    fn statistics_match_direct_computation() {
        let reference = params_for_pattern(PatternId::Q);
        let d1s = [0.25, 0.26, 0.24, 0.27];
        let runs = d1s.iter().enumerate().map(|(i, &d)| mock(i as u64, reference.with(ParamId::D1, d).unwrap(), 1e-5 * (i + 1) as f64)).collect();
        let agg = RunAggregate::from_runs(ParamSet::D, reference, runs, vec![]).unwrap();
        let s = agg.summary(ParamId::D1).unwrap();
        assert!((s.mean - 0.255).abs() < 1e-15);
        let var = d1s.iter().map(|d| (d - 0.255) * (d - 0.255)).sum::<f64>() / 4.0;
        assert!((s.variance - var).abs() < 1e-15);
        assert!((s.error_pct - 100.0 * 0.045 / 0.3).abs() < 1e-10);
        assert!((agg.mean_data_loss - 2.5e-5).abs() < 1e-18);
        assert_eq!(agg.best_run().restart_seed, 0);
    }

    #[test]
    fn flags_the_lone_alternative() {
        let reference = params_for_pattern(PatternId::Q);
        let alphas = [0.683, 0.684, 0.682, 0.683, 0.685, 0.681, 0.684, 0.662];
        let runs = alphas.iter().enumerate().map(|(i, &a)| mock(i as u64, reference.with(ParamId::Alpha, a).unwrap(), 1e-5)).collect();
        let agg = RunAggregate::from_runs(ParamSet::D, reference, runs, vec![]).unwrap();
        assert_eq!(agg.alternative_candidates, vec![7]);
    }

    #[test]
    fn empty_aggregate_is_an_error() {
        let p = params_for_pattern(PatternId::P);
        let failed = vec![FailedRun { restart_seed: 1, error: "diverged".into() }];
        assert!(RunAggregate::from_runs(ParamSet::A, p, vec![], failed).is_err());
        assert_eq!(restart_seeds(u64::MAX, 2), vec![u64::MAX, 0]);
    }
}
