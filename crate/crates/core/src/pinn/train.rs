use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::Pattern;
use crate::nn::{AdamState, Mlp, ParamMask, TrainableSet, DEFAULT_LAYERS};
use crate::params::{ParamError, ParamId, RdParams};

use super::loss::{backprop, data_loss, loss, loss_value, Batch, FullBatch, LossBreakdown};
use super::points::{build_point_sets, PointConfig, PointSets};
use super::PinnError;

/// Which PDE parameters an inverse run learns; the rest stay at their
/// reference values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamSet {
    A,
    B,
    C,
    D,
    E,
}

impl ParamSet {
    pub const ALL: [ParamSet; 5] = [ParamSet::A, ParamSet::B, ParamSet::C, ParamSet::D, ParamSet::E];

    pub fn trainable(self) -> &'static [ParamId] {
        use ParamId::*;
        match self {
            ParamSet::A => &[D1, D2],
            ParamSet::B => &[Alpha, Beta],
            ParamSet::C => &[D1, D2, Alpha, Beta],
            ParamSet::D => &[D1, Alpha, Beta],
            ParamSet::E => &[D1, Alpha, Beta, R1],
        }
    }

    pub fn mask(self) -> ParamMask {
        ParamMask::only(self.trainable())
    }

    /// Starting parameters: trainables at 0 except `beta` at 1, everything
    /// else copied from `reference`.
    pub fn initial_params(self, reference: &RdParams) -> Result<RdParams, ParamError> {
        let mut p = *reference;
        // beta first so it never passes through 0 on the way.
        if self.trainable().contains(&ParamId::Beta) {
            p = p.with(ParamId::Beta, 1.0)?;
        }
        for &id in self.trainable() {
            if id != ParamId::Beta {
                p = p.with(id, 0.0)?;
            }
        }
        Ok(p)
    }
}

impl fmt::Display for ParamSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ParamSet {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(ParamSet::A),
            "B" => Ok(ParamSet::B),
            "C" => Ok(ParamSet::C),
            "D" => Ok(ParamSet::D),
            "E" => Ok(ParamSet::E),
            _ => Err(ParamError::UnknownParam(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub layers: Vec<usize>,
    /// Network input scale; `None` uses the largest absolute domain bound.
    pub input_scale: Option<f64>,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub w_f: f64,
    /// Every this many batches, the whole boundary set joins the batch.
    pub bc_every: usize,
    /// Stop when the data loss improved by less than `plateau_rel` over
    /// this many epochs. 0 disables early stopping.
    pub plateau_window: usize,
    pub plateau_rel: f64,
    pub history_every: usize,
    pub points: PointConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            layers: DEFAULT_LAYERS.to_vec(),
            input_scale: None,
            lr: 2.5e-4,
            batch_size: 25,
            epochs: 5000,
            w_f: 10.0,
            bc_every: 8,
            plateau_window: 500,
            plateau_rel: 0.01,
            history_every: 50,
            points: PointConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Reduced budget used by the acceptance suite.
    pub fn desk() -> Self {
        TrainConfig { epochs: 1000, ..Default::default() }
    }

    fn check(&self) -> Result<(), PinnError> {
        let bad = |m: String| Err(PinnError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.bc_every == 0 || self.history_every == 0 {
            return bad("batch_size, bc_every and history_every must be at least 1".into());
        }
        if !(self.w_f >= 0.0 && self.w_f.is_finite()) {
            return bad(format!("w_f must be non-negative, got {}", self.w_f));
        }
        if !(self.plateau_rel >= 0.0 && self.plateau_rel < 1.0) {
            return bad(format!("plateau_rel must lie in [0, 1), got {}", self.plateau_rel));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopCause {
    EpochBudget,
    Plateau,
}

/// Full-set losses and parameters recorded during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub params: RdParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRun {
    pub set: ParamSet,
    pub inferred: RdParams,
    pub final_loss: LossBreakdown,
    pub restart_seed: u64,
    pub epochs: usize,
    pub stop: StopCause,
    pub beta_nudges: u64,
    pub wall_time_s: f64,
    pub history: Vec<HistoryEntry>,
}

fn default_scale(pattern: &Pattern) -> f64 {
    let g = pattern.grid();
    [g.x_min(), g.x_max(), g.y_min(), g.y_max()].iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Mini-batch index lists for one epoch. When every data point has its own
/// collocation node, both sets share one permutation so each batch pairs a
/// node's data and residual terms.
fn epoch_batches(sets: &PointSets, batch: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<usize>, Vec<usize>)> {
    let nd = sets.data.len();
    let nc = sets.collocation.len();
    let mut perm_d: Vec<usize> = (0..nd).collect();
    perm_d.shuffle(rng);
    let paired = nd == nc && sets.colloc_of_data.iter().all(Option::is_some);
    let perm_c: Vec<usize> = if paired {
        perm_d.iter().map(|&d| sets.colloc_of_data[d].unwrap()).collect()
    } else {
        let mut p: Vec<usize> = (0..nc).collect();
        p.shuffle(rng);
        p
    };
    let n_batches = nd.max(nc).div_ceil(batch);
    let chunk = |p: &[usize], b: usize| {
        let lo = (b * batch).min(p.len());
        p[lo..((b + 1) * batch).min(p.len())].to_vec()
    };
    (0..n_batches).map(|b| (chunk(&perm_d, b), chunk(&perm_c, b))).collect()
}

/// Trains a fresh network and the `set` parameters against `pattern`.
/// Parameters outside the set keep the values in `reference`.
pub fn train_inverse(
    pattern: &Pattern,
    reference: &RdParams,
    set: ParamSet,
    cfg: &TrainConfig,
    restart_seed: u64,
) -> Result<InferenceRun, PinnError> {
    cfg.check()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(restart_seed);
    let net_seed: u64 = rng.gen();
    let point_seed: u64 = rng.gen();
    let sets = build_point_sets(pattern, &cfg.points, point_seed)?;
    let scale = cfg.input_scale.unwrap_or_else(|| default_scale(pattern));
    let net = Mlp::new(&cfg.layers, scale, net_seed)?;
    let mut ts = TrainableSet::new(net, set.initial_params(reference)?, set.mask());
    let mut adam = AdamState::new(ts.n_flat(), cfg.lr);
    let full = FullBatch::new(&sets);
    let all_bc: Vec<usize> = (0..sets.boundary.len()).collect();

    let mut history = vec![HistoryEntry { epoch: 0, loss: loss_value(&ts, &sets, &full.as_batch(), cfg.w_f)?, params: *ts.params() }];
    // best data loss seen up to the end of each epoch
    let mut best: Vec<f64> = Vec::with_capacity(cfg.epochs);
    let mut stop = StopCause::EpochBudget;
    let mut epochs_done = 0;
    for epoch in 1..=cfg.epochs {
        for (b, (data, colloc)) in epoch_batches(&sets, cfg.batch_size, &mut rng).iter().enumerate() {
            let boundary: &[usize] = if b % cfg.bc_every == 0 { &all_bc } else { &[] };
            let batch = Batch { data, collocation: colloc, boundary };
            let (_, graph) = loss(&ts, &sets, &batch, cfg.w_f)?;
            let grad = backprop(&ts, &graph)?;
            adam.step(&mut ts, &grad)?;
        }
        epochs_done = epoch;
        let dl = data_loss(&ts, &sets)?;
        best.push(best.last().map_or(dl, |&b: &f64| b.min(dl)));
        if epoch % cfg.history_every == 0 || epoch == cfg.epochs {
            let l = loss_value(&ts, &sets, &full.as_batch(), cfg.w_f)?;
            log::debug!("seed {restart_seed} epoch {epoch}: data {:.3e} total {:.3e}", l.mse_h, l.total);
            history.push(HistoryEntry { epoch, loss: l, params: *ts.params() });
        }
        let w = cfg.plateau_window;
        if w > 0 && epoch > w && best[epoch - 1] > (1.0 - cfg.plateau_rel) * best[epoch - 1 - w] {
            stop = StopCause::Plateau;
            break;
        }
    }
    let final_loss = match history.last() {
        Some(h) if h.epoch == epochs_done => h.loss,
        _ => {
            let l = loss_value(&ts, &sets, &full.as_batch(), cfg.w_f)?;
            history.push(HistoryEntry { epoch: epochs_done, loss: l, params: *ts.params() });
            l
        }
    };
    Ok(InferenceRun {
        set,
        inferred: *ts.params(),
        final_loss,
        restart_seed,
        epochs: epochs_done,
        stop,
        beta_nudges: adam.beta_nudges,
        wall_time_s: start.elapsed().as_secs_f64(),
        history,
    })
}
