//! Uniform vertex-centred grids and the fields that live on them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::RdParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs at least 3 nodes per axis, got {nx}x{ny}")]
    TooSmall { nx: usize, ny: usize },
    #[error("invalid domain bounds [{lo}, {hi}]")]
    BadBounds { lo: f64, hi: f64 },
    #[error("field has {got} values but the grid has {expected} nodes")]
    Shape { expected: usize, got: usize },
    #[error("field {field} holds a non-finite value at index {index}")]
    NonFinite { field: &'static str, index: usize },
}

/// Square default domain half-width.
pub const DEFAULT_HALF_EXTENT: f64 = 100.0;
/// Default node count per axis.
pub const DEFAULT_NODES: usize = 50;

/// Uniform 2-D discretization. Node `(ix, iy)` sits at
/// `(x_min + ix*dx, y_min + iy*dy)`, so boundary nodes lie exactly on the
/// domain edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct GridSpec {
    nx: usize,
    ny: usize,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    dx: f64,
    dy: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self, GridError> {
        if nx < 3 || ny < 3 {
            return Err(GridError::TooSmall { nx, ny });
        }
        for (lo, hi) in [(x_min, x_max), (y_min, y_max)] {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(GridError::BadBounds { lo, hi });
            }
        }
        Ok(GridSpec {
            nx,
            ny,
            x_min,
            x_max,
            y_min,
            y_max,
            dx: (x_max - x_min) / (nx - 1) as f64,
            dy: (y_max - y_min) / (ny - 1) as f64,
        })
    }

    /// `n x n` nodes on `[-half, half]^2`.
    pub fn square(n: usize, half: f64) -> Result<Self, GridError> {
        Self::new(n, n, -half, half, -half, half)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major flat index, `y` outer.
    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn x(&self, ix: usize) -> f64 {
        if ix + 1 == self.nx {
            self.x_max
        } else {
            self.x_min + ix as f64 * self.dx
        }
    }

    #[inline]
    pub fn y(&self, iy: usize) -> f64 {
        if iy + 1 == self.ny {
            self.y_max
        } else {
            self.y_min + iy as f64 * self.dy
        }
    }

    /// Coordinates of the node at a flat index.
    pub fn coords(&self, index: usize) -> (f64, f64) {
        (self.x(index % self.nx), self.y(index / self.nx))
    }

    pub fn is_edge(&self, ix: usize, iy: usize) -> bool {
        ix == 0 || iy == 0 || ix + 1 == self.nx || iy + 1 == self.ny
    }

    /// Flat indices of all edge nodes in row-major order.
    pub fn edge_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.is_edge(i % self.nx, i / self.nx))
            .collect()
    }

    pub fn check_field(&self, field: &[f64]) -> Result<(), GridError> {
        if field.len() != self.len() {
            return Err(GridError::Shape { expected: self.len(), got: field.len() });
        }
        Ok(())
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::square(DEFAULT_NODES, DEFAULT_HALF_EXTENT).expect("default grid is valid")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRepr {
    nx: usize,
    ny: usize,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl TryFrom<GridRepr> for GridSpec {
    type Error = GridError;
    fn try_from(g: GridRepr) -> Result<Self, Self::Error> {
        GridSpec::new(g.nx, g.ny, g.x_min, g.x_max, g.y_min, g.y_max)
    }
}

impl From<GridSpec> for GridRepr {
    fn from(g: GridSpec) -> Self {
        GridRepr { nx: g.nx, ny: g.ny, x_min: g.x_min, x_max: g.x_max, y_min: g.y_min, y_max: g.y_max }
    }
}

/// How the solver produced a pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub params: RdParams,
    pub rng_seed: u64,
    pub seed_amplitude: f64,
    pub boundary: crate::solver::Boundary,
    pub dt: f64,
    pub steady_tol: f64,
    pub max_steps: u64,
    pub steps: u64,
    pub final_max_rate: f64,
    pub stop: crate::solver::StopReason,
}

/// Paired `u`, `v` fields on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    grid: GridSpec,
    u: Vec<f64>,
    v: Vec<f64>,
    pub provenance: Option<Provenance>,
}

impl Pattern {
    pub fn new(grid: GridSpec, u: Vec<f64>, v: Vec<f64>) -> Result<Self, GridError> {
        grid.check_field(&u)?;
        grid.check_field(&v)?;
        for (name, field) in [("u", &u), ("v", &v)] {
            if let Some(index) = field.iter().position(|x| !x.is_finite()) {
                return Err(GridError::NonFinite { field: name, index });
            }
        }
        Ok(Pattern { grid, u, v, provenance: None })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Pattern { grid, u: vec![0.0; grid.len()], v: vec![0.0; grid.len()], provenance: None }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn u(&self) -> &[f64] {
        &self.u
    }
    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub(crate) fn fields_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.u, &mut self.v)
    }

    pub fn into_fields(self) -> (Vec<f64>, Vec<f64>) {
        (self.u, self.v)
    }

    /// The parameters that generated this pattern, when known.
    pub fn source_params(&self) -> Option<RdParams> {
        self.provenance.as_ref().map(|p| p.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid() {
        let g = GridSpec::default();
        assert_eq!((g.nx(), g.ny()), (50, 50));
        assert!((g.dx() - 200.0 / 49.0).abs() < 1e-15);
        assert_eq!(g.x(0), -100.0);
        assert_eq!(g.x(49), 100.0);
        assert_eq!(g.y(49), 100.0);
        assert_eq!(g.edge_indices().len(), 196);
        assert_eq!(g.index(3, 2), 103);
        assert_eq!(g.coords(103), (g.x(3), g.y(2)));
    }

    #[test]
    fn rejects_bad_grids() {
        assert_eq!(GridSpec::square(2, 1.0), Err(GridError::TooSmall { nx: 2, ny: 2 }));
        assert!(matches!(GridSpec::new(5, 5, 1.0, 1.0, 0.0, 1.0), Err(GridError::BadBounds { .. })));
    }

    #[test]
    fn pattern_shape_checks() {
        let g = GridSpec::square(4, 1.0).unwrap();
        assert!(matches!(Pattern::new(g, vec![0.0; 15], vec![0.0; 16]), Err(GridError::Shape { .. })));
        let mut u = vec![0.0; 16];
        u[7] = f64::INFINITY;
        assert_eq!(
            Pattern::new(g, u, vec![0.0; 16]),
            Err(GridError::NonFinite { field: "u", index: 7 })
        );
    }

    #[test]
    fn grid_json_recomputes_spacing() {
        let g = GridSpec::new(10, 7, -1.0, 2.0, 0.0, 3.0).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        let back: GridSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<GridSpec>(r#"{"nx":2,"ny":5,"x_min":0,"x_max":1,"y_min":0,"y_max":1}"#).is_err());
    }
}
