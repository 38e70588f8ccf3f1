use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::Pattern;

use super::PinnError;

/// A supervised sample of the target pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataPoint {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointConfig {
    /// Number of boundary residual points.
    pub n_bc: usize,
    /// Keep only this many data nodes (all nodes when `None`).
    pub n_data: Option<usize>,
    /// Keep only this many collocation nodes (all nodes when `None`).
    pub n_collocation: Option<usize>,
}

impl Default for PointConfig {
    fn default() -> Self {
        PointConfig { n_bc: 200, n_data: None, n_collocation: None }
    }
}

/// Data, collocation and boundary points drawn from one pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSets {
    pub data: Vec<DataPoint>,
    pub collocation: Vec<[f64; 2]>,
    pub boundary: Vec<[f64; 2]>,
    pub stencil_h: f64,
    /// For each data point, the collocation point at the same node, if any.
    pub(crate) colloc_of_data: Vec<Option<usize>>,
}

impl PointSets {
    /// Assembles point sets directly; used for hand-built fixtures.
    pub fn from_parts(
        data: Vec<DataPoint>,
        collocation: Vec<[f64; 2]>,
        boundary: Vec<[f64; 2]>,
        stencil_h: f64,
    ) -> Result<Self, PinnError> {
        if !(stencil_h > 0.0 && stencil_h.is_finite()) {
            return Err(PinnError::Config(format!("stencil spacing must be positive, got {stencil_h}")));
        }
        let colloc_of_data = data
            .iter()
            .map(|d| collocation.iter().position(|c| c[0] == d.x && c[1] == d.y))
            .collect();
        Ok(PointSets { data, collocation, boundary, stencil_h, colloc_of_data })
    }
}

fn pick(n_total: usize, n_keep: Option<usize>, rng: &mut ChaCha8Rng, what: &str) -> Result<Vec<usize>, PinnError> {
    match n_keep {
        None => Ok((0..n_total).collect()),
        Some(k) if k == 0 || k > n_total => {
            Err(PinnError::Config(format!("cannot keep {k} {what} points out of {n_total}")))
        }
        Some(k) => {
            let mut idx = rand::seq::index::sample(rng, n_total, k).into_vec();
            idx.sort_unstable();
            Ok(idx)
        }
    }
}

/// Builds the three point sets. Data and collocation points are grid nodes;
/// boundary points cover every edge node once (in random order) and top up
/// with uniform draws with replacement until `n_bc` points exist. When
/// `n_bc` is smaller than the edge count the edge nodes are subsampled
/// without replacement.
pub fn build_point_sets(pattern: &Pattern, cfg: &PointConfig, seed: u64) -> Result<PointSets, PinnError> {
    let grid = pattern.grid();
    let (dx, dy) = (grid.dx(), grid.dy());
    if (dx - dy).abs() > 1e-12 * dx.max(dy) {
        return Err(PinnError::Config(format!("stencil needs equal spacings, got dx={dx} dy={dy}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data_idx = pick(grid.len(), cfg.n_data, &mut rng, "data")?;
    let colloc_idx = pick(grid.len(), cfg.n_collocation, &mut rng, "collocation")?;
    let data = data_idx
        .iter()
        .map(|&i| {
            let (x, y) = grid.coords(i);
            DataPoint { x, y, u: pattern.u()[i], v: pattern.v()[i] }
        })
        .collect();
    let collocation: Vec<[f64; 2]> = colloc_idx.iter().map(|&i| grid.coords(i).into()).collect();
    let colloc_of_data =
        data_idx.iter().map(|i| colloc_idx.binary_search(i).ok()).collect();

    let mut edges = grid.edge_indices();
    edges.shuffle(&mut rng);
    let mut chosen: Vec<usize> = edges.iter().copied().take(cfg.n_bc).collect();
    while chosen.len() < cfg.n_bc {
        chosen.push(edges[rng.gen_range(0..edges.len())]);
    }
    let boundary = chosen.iter().map(|&i| grid.coords(i).into()).collect();
    Ok(PointSets { data, collocation, boundary, stencil_h: dx, colloc_of_data })
}
