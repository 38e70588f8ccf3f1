use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::nn::{Tape, TrainableSet};

use super::points::PointSets;
use super::residual::{residual_partials, STENCIL};
use super::PinnError;

/// The three mean-squared-error terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse_h: f64,
    pub mse_f: f64,
    pub mse_bc: f64,
    pub w_f: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(mse_h: f64, mse_f: f64, mse_bc: f64, w_f: f64) -> Result<Self, PinnError> {
        let total = mse_h + w_f * mse_f + mse_bc;
        for (component, value) in [("mse_h", mse_h), ("mse_f", mse_f), ("mse_bc", mse_bc), ("total", total)] {
            if !value.is_finite() {
                return Err(PinnError::NonFiniteLoss { component, value });
            }
        }
        Ok(LossBreakdown { mse_h, mse_f, mse_bc, w_f, total })
    }
}

/// Indices into a [`PointSets`] selecting one mini-batch.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub data: &'a [usize],
    pub collocation: &'a [usize],
    pub boundary: &'a [usize],
}

/// Owned index lists covering every point of a [`PointSets`].
#[derive(Debug, Clone)]
pub struct FullBatch {
    data: Vec<usize>,
    collocation: Vec<usize>,
    boundary: Vec<usize>,
}

impl FullBatch {
    pub fn new(sets: &PointSets) -> Self {
        FullBatch {
            data: (0..sets.data.len()).collect(),
            collocation: (0..sets.collocation.len()).collect(),
            boundary: (0..sets.boundary.len()).collect(),
        }
    }

    pub fn as_batch(&self) -> Batch<'_> {
        Batch { data: &self.data, collocation: &self.collocation, boundary: &self.boundary }
    }
}

/// Everything the reverse pass needs: the network tape plus the loss
/// sensitivities to each network output and to the PDE parameters.
#[derive(Debug, Clone)]
pub struct LossGraph {
    tape: Tape,
    d_out: Vec<f64>,
    d_pde: [f64; 5],
}

/// Row layout of the points evaluated for one batch.
struct Layout {
    points: Vec<[f64; 2]>,
    colloc_rows: Vec<usize>,
    bc_rows: Vec<usize>,
    data_rows: Vec<usize>,
}

fn layout(sets: &PointSets, batch: &Batch) -> Result<Layout, PinnError> {
    let h = sets.stencil_h;
    let n_rows = 5 * (batch.collocation.len() + batch.boundary.len()) + batch.data.len();
    let mut points = Vec::with_capacity(n_rows);
    let push_stencil = |c: [f64; 2], points: &mut Vec<[f64; 2]>| {
        let base = points.len();
        points.extend(STENCIL.iter().map(|o| [c[0] + o[0] * h, c[1] + o[1] * h]));
        base
    };
    let get = |set_len: usize, i: usize, what: &'static str| {
        if i < set_len {
            Ok(i)
        } else {
            Err(PinnError::Config(format!("{what} index {i} out of range ({set_len} points)")))
        }
    };
    let mut colloc_rows = Vec::with_capacity(batch.collocation.len());
    let mut centre_of: HashMap<usize, usize> = HashMap::with_capacity(batch.collocation.len());
    for &c in batch.collocation {
        let c = get(sets.collocation.len(), c, "collocation")?;
        let row = push_stencil(sets.collocation[c], &mut points);
        colloc_rows.push(row);
        centre_of.insert(c, row);
    }
    let mut bc_rows = Vec::with_capacity(batch.boundary.len());
    for &b in batch.boundary {
        let b = get(sets.boundary.len(), b, "boundary")?;
        bc_rows.push(push_stencil(sets.boundary[b], &mut points));
    }
    let mut data_rows = Vec::with_capacity(batch.data.len());
    for &d in batch.data {
        let d = get(sets.data.len(), d, "data")?;
        let shared = sets.colloc_of_data[d].and_then(|c| centre_of.get(&c).copied());
        data_rows.push(shared.unwrap_or_else(|| {
            let p = &sets.data[d];
            points.push([p.x, p.y]);
            points.len() - 1
        }));
    }
    Ok(Layout { points, colloc_rows, bc_rows, data_rows })
}

/// Accumulates the residual terms of one stencil group; returns the sum of
/// `f_u^2 + f_v^2`. With `scale = Some(s)` it also adds `s * d(f^2)/d(.)`
/// into the output and parameter sensitivities.
fn residual_terms(
    ts: &TrainableSet,
    tape: &Tape,
    rows: &[usize],
    h: f64,
    scale: Option<f64>,
    d_out: &mut [f64],
    d_pde: &mut [f64; 5],
) -> f64 {
    let p = ts.params();
    let inv_h2 = 1.0 / (h * h);
    let mut sum = 0.0;
    for &base in rows {
        let (u, v) = tape.output(base);
        let mut nu = 0.0;
        let mut nv = 0.0;
        for k in 1..5 {
            let (a, b) = tape.output(base + k);
            nu += a;
            nv += b;
        }
        let lap_u = (nu - 4.0 * u) * inv_h2;
        let lap_v = (nv - 4.0 * v) * inv_h2;
        let r = residual_partials(u, v, lap_u, lap_v, p);
        sum += r.fu * r.fu + r.fv * r.fv;
        if let Some(s) = scale {
            let gu = 2.0 * s * r.fu;
            let gv = 2.0 * s * r.fv;
            let g_lap_u = gu * r.dfu_dlap * inv_h2;
            let g_lap_v = gv * r.dfv_dlap * inv_h2;
            d_out[2 * base] += gu * r.dfu_du + gv * r.dfv_du - 4.0 * g_lap_u;
            d_out[2 * base + 1] += gu * r.dfu_dv + gv * r.dfv_dv - 4.0 * g_lap_v;
            for k in 1..5 {
                d_out[2 * (base + k)] += g_lap_u;
                d_out[2 * (base + k) + 1] += g_lap_v;
            }
            for j in 0..5 {
                d_pde[j] += gu * r.dfu_dp[j] + gv * r.dfv_dp[j];
            }
        }
    }
    sum
}

fn evaluate(
    ts: &TrainableSet,
    sets: &PointSets,
    batch: &Batch,
    w_f: f64,
    with_graph: bool,
) -> Result<(LossBreakdown, Option<LossGraph>), PinnError> {
    if !(w_f >= 0.0 && w_f.is_finite()) {
        return Err(PinnError::Config(format!("w_f must be a finite non-negative weight, got {w_f}")));
    }
    if ts.params().beta() == 0.0 {
        return Err(PinnError::ZeroBeta);
    }
    let lay = layout(sets, batch)?;
    let tape = ts.net.forward_tape(&lay.points);
    let mut d_out = vec![0.0; if with_graph { 2 * lay.points.len() } else { 0 }];
    let mut d_pde = [0.0; 5];

    let n_h = lay.data_rows.len();
    let mut sq = 0.0;
    for (&row, &d) in lay.data_rows.iter().zip(batch.data) {
        let target = &sets.data[d];
        let (u, v) = tape.output(row);
        let (eu, ev) = (u - target.u, v - target.v);
        sq += eu * eu + ev * ev;
        if with_graph {
            // d/d(u) of sum(e^2) / (2 n_h)
            d_out[2 * row] += eu / n_h as f64;
            d_out[2 * row + 1] += ev / n_h as f64;
        }
    }
    let mse_h = if n_h > 0 { sq / (2 * n_h) as f64 } else { 0.0 };

    let h = sets.stencil_h;
    let n_f = lay.colloc_rows.len();
    let scale_f = (with_graph && n_f > 0).then(|| w_f / n_f as f64);
    let sum_f = residual_terms(ts, &tape, &lay.colloc_rows, h, scale_f, &mut d_out, &mut d_pde);
    let mse_f = if n_f > 0 { sum_f / n_f as f64 } else { 0.0 };

    let n_bc = lay.bc_rows.len();
    let scale_bc = (with_graph && n_bc > 0).then(|| 1.0 / n_bc as f64);
    let sum_bc = residual_terms(ts, &tape, &lay.bc_rows, h, scale_bc, &mut d_out, &mut d_pde);
    let mse_bc = if n_bc > 0 { sum_bc / n_bc as f64 } else { 0.0 };

    let breakdown = LossBreakdown::new(mse_h, mse_f, mse_bc, w_f)?;
    let graph = with_graph.then(|| LossGraph { tape, d_out, d_pde });
    Ok((breakdown, graph))
}

/// Loss of one batch together with the recorded graph for [`backprop`].
pub fn loss(
    ts: &TrainableSet,
    sets: &PointSets,
    batch: &Batch,
    w_f: f64,
) -> Result<(LossBreakdown, LossGraph), PinnError> {
    let (b, g) = evaluate(ts, sets, batch, w_f, true)?;
    Ok((b, g.expect("graph requested")))
}

/// Loss of one batch without recording anything.
pub fn loss_value(ts: &TrainableSet, sets: &PointSets, batch: &Batch, w_f: f64) -> Result<LossBreakdown, PinnError> {
    Ok(evaluate(ts, sets, batch, w_f, false)?.0)
}

/// Data loss over every data point; cheaper than a full [`loss_value`].
pub fn data_loss(ts: &TrainableSet, sets: &PointSets) -> Result<f64, PinnError> {
    let idx: Vec<usize> = (0..sets.data.len()).collect();
    let batch = Batch { data: &idx, collocation: &[], boundary: &[] };
    Ok(loss_value(ts, sets, &batch, 0.0)?.mse_h)
}

/// Exact gradient of the recorded loss with respect to the flat trainable
/// vector of `ts` (network parameters, then `D1, D2, alpha, beta, r1`).
/// Entries for masked PDE parameters are still filled in.
pub fn backprop(ts: &TrainableSet, graph: &LossGraph) -> Result<Vec<f64>, PinnError> {
    let n_net = ts.net.n_params();
    let mut grad = vec![0.0; ts.n_flat()];
    ts.net.backward(&graph.tape, &graph.d_out, &mut grad)?;
    grad[n_net..].copy_from_slice(&graph.d_pde);
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(PinnError::NonFiniteGradient { index, name: ts.flat_name(index) });
    }
    Ok(grad)
}

/// Worst disagreement between [`backprop`] and central differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub n_checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_name: String,
}

/// Compares every component of the exact loss gradient with a central
/// difference of step `h`. Relative error is `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn gradient_check(ts: &TrainableSet, sets: &PointSets, batch: &Batch, w_f: f64, h: f64) -> Result<GradCheck, PinnError> {
    let (_, graph) = loss(ts, sets, batch, w_f)?;
    let exact = backprop(ts, &graph)?;
    let base = ts.flat();
    let mut probe = ts.clone();
    let mut eval = |i: usize, x: f64| -> Result<f64, PinnError> {
        let mut v = base.clone();
        v[i] = x;
        probe.set_flat(&v)?;
        Ok(loss_value(&probe, sets, batch, w_f)?.total)
    };
    let mut report = GradCheck { n_checked: 0, max_rel_error: 0.0, worst_index: 0, worst_name: String::new() };
    for (i, &g) in exact.iter().enumerate() {
        let fd = (eval(i, base[i] + h)? - eval(i, base[i] - h)?) / (2.0 * h);
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
        report.n_checked += 1;
        if rel > report.max_rel_error || report.worst_name.is_empty() {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.worst_name = ts.flat_name(i);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mlp, ParamMask};
    use crate::params::{params_for_pattern, PatternId, RdParams};
    use crate::pinn::points::DataPoint;

    fn zero_set(params: RdParams) -> TrainableSet {
        TrainableSet::new(Mlp::zeros(&[2, 4, 2], 1.0).unwrap(), params, ParamMask::default())
    }

    fn toy_sets(u: f64) -> PointSets {
        let pts: Vec<[f64; 2]> = (0..4).map(|i| [i as f64, -(i as f64)]).collect();
        let data = pts.iter().map(|p| DataPoint { x: p[0], y: p[1], u, v: u }).collect();
        PointSets::from_parts(data, pts.clone(), vec![[5.0, 5.0]], 0.5).unwrap()
    }

    #[test]
    fn perfect_fit_of_zero_pattern() {
        let ts = zero_set(RdParams::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0).unwrap());
        let sets = toy_sets(0.0);
        let full = FullBatch::new(&sets);
        let b = loss_value(&ts, &sets, &full.as_batch(), 10.0).unwrap();
        assert_eq!(b, LossBreakdown { mse_h: 0.0, mse_f: 0.0, mse_bc: 0.0, w_f: 10.0, total: 0.0 });
    }

    #[test]
    fn constant_prediction_data_loss() {
        let c = 0.37;
        let mut net = Mlp::zeros(&[2, 4, 2], 1.0).unwrap();
        let n = net.n_params();
        net.params_mut()[n - 2] = c;
        net.params_mut()[n - 1] = c;
        let ts = TrainableSet::new(net, params_for_pattern(PatternId::P), ParamMask::default());
        let sets = toy_sets(0.0);
        let full = FullBatch::new(&sets);
        let b = loss_value(&ts, &sets, &full.as_batch(), 10.0).unwrap();
        assert!((b.mse_h - c * c).abs() < 1e-15);
        assert!((b.total - (b.mse_h + 10.0 * b.mse_f + b.mse_bc)).abs() <= 1e-15 * b.total);
    }

    #[test]
    fn empty_components_are_zero() {
        let ts = zero_set(params_for_pattern(PatternId::Q));
        let sets = toy_sets(1.0);
        let b = loss_value(&ts, &sets, &Batch { data: &[0, 2], collocation: &[], boundary: &[] }, 10.0).unwrap();
        assert_eq!((b.mse_f, b.mse_bc), (0.0, 0.0));
        assert_eq!(b.mse_h, 1.0);
        assert!(loss_value(&ts, &sets, &Batch { data: &[9], collocation: &[], boundary: &[] }, 10.0).is_err());
        assert!(loss_value(&ts, &sets, &Batch { data: &[], collocation: &[], boundary: &[] }, -1.0).is_err());
    }

    #[test]
    fn shared_centres_match_separate_evaluation() {
        let net = Mlp::new(&[2, 6, 2], 3.0, 4).unwrap();
        let ts = TrainableSet::new(net, params_for_pattern(PatternId::R), ParamMask::default());
        let sets = toy_sets(0.2);
        // Same data points, once paired with their collocation nodes and once not.
        let paired = loss_value(&ts, &sets, &Batch { data: &[1, 3], collocation: &[1, 3], boundary: &[] }, 0.0).unwrap();
        let alone = loss_value(&ts, &sets, &Batch { data: &[1, 3], collocation: &[0], boundary: &[] }, 0.0).unwrap();
        assert_eq!(paired.mse_h, alone.mse_h);
    }
}
