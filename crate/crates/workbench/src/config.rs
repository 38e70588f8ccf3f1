//! Workbench configuration: file form, defaults and command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use turing_core::grid::{GridSpec, DEFAULT_NODES};
use turing_core::pinn::TrainConfig;
use turing_core::solver::SolverConfig;

use crate::io::{read_text, IoError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Nodes per axis.
    pub nodes: usize,
    /// The domain is `[-half_extent, half_extent]^2`.
    pub half_extent: f64,
}

/// Half extent giving unit node spacing with the default node count.
pub const UNIT_SPACING_HALF_EXTENT: f64 = (DEFAULT_NODES - 1) as f64 / 2.0;

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { nodes: DEFAULT_NODES, half_extent: UNIT_SPACING_HALF_EXTENT }
    }
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec, ConfigError> {
        GridSpec::square(self.nodes, self.half_extent).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// Reduced budget for the `desk` experiment and the acceptance suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeskConfig {
    pub epochs: usize,
    pub restarts: usize,
}

impl Default for DeskConfig {
    fn default() -> Self {
        DeskConfig { epochs: 1000, restarts: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkbenchConfig {
    pub grid: GridConfig,
    pub solver: SolverConfig,
    pub train: TrainConfig,
    pub restarts: usize,
    pub desk: DeskConfig,
    /// Base seed; solver seeds and restart seeds derive from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Relative norm difference allowed by validation.
    pub validation_threshold: f64,
}

impl Default for WorkbenchConfig {
    fn default() -> Self {
        WorkbenchConfig {
            grid: GridConfig::default(),
            solver: SolverConfig::default(),
            train: TrainConfig::default(),
            restarts: 8,
            desk: DeskConfig::default(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            validation_threshold: turing_core::analysis::DEFAULT_NORM_THRESHOLD,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Values given on the command line (or through the environment); each one
/// replaces the corresponding config-file value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub restarts: Option<usize>,
}

impl WorkbenchConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: WorkbenchConfig =
            serde_json::from_str(text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&read_text(path)?, path)
    }

    /// Defaults, then the file at `path` if any, then `overrides`.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
            self.desk.epochs = e;
        }
        if let Some(r) = o.restarts {
            self.restarts = r;
            self.desk.restarts = r;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid.spec()?;
        if self.restarts == 0 || self.desk.restarts == 0 {
            return Err(ConfigError::Invalid("restarts must be at least 1".into()));
        }
        if !(self.validation_threshold > 0.0) {
            return Err(ConfigError::Invalid("validation_threshold must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = WorkbenchConfig::default();
        assert_eq!(c.train.layers, vec![2, 64, 64, 64, 64, 2]);
        assert_eq!((c.train.lr, c.train.batch_size, c.train.w_f), (2.5e-4, 25, 10.0));
        assert_eq!((c.train.points.n_bc, c.restarts), (200, 8));
        let g = c.grid.spec().unwrap();
        assert_eq!((g.len(), g.dx()), (2500, 1.0));
    }

    #[test]
    fn json_round_trip() {
        let mut c = WorkbenchConfig::default();
        c.seed = 17;
        c.train.w_f = 2.5;
        c.grid.half_extent = 100.0;
        let back = WorkbenchConfig::from_json(&c.to_json(), Path::new("c.json")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(WorkbenchConfig::default().hash(), c.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(WorkbenchConfig::from_json(r#"{"seeed": 1}"#, Path::new("c")).is_err());
        assert!(WorkbenchConfig::from_json(r#"{"train": {"learning_rate": 1}}"#, Path::new("c")).is_err());
        let partial = WorkbenchConfig::from_json(r#"{"train": {"epochs": 7}}"#, Path::new("c")).unwrap();
        assert_eq!(partial.train.epochs, 7);
        assert_eq!(partial.train.lr, 2.5e-4);
    }

    #[test]
    fn precedence_per_field() {
        let file = WorkbenchConfig::from_json(
            r#"{"seed": 5, "out_dir": "from_file", "restarts": 4, "train": {"epochs": 9}}"#,
            Path::new("c"),
        )
        .unwrap();
        let mut c = file.clone();
        c.apply(&Overrides::default());
        assert_eq!(c, file);
        let o = Overrides { seed: Some(6), out_dir: Some("cli".into()), epochs: Some(11), restarts: Some(2) };
        c.apply(&o);
        assert_eq!((c.seed, c.out_dir.to_str().unwrap(), c.train.epochs, c.restarts), (6, "cli", 11, 2));
        let mut d = WorkbenchConfig::default();
        d.apply(&Overrides { seed: Some(3), ..Default::default() });
        assert_eq!((d.seed, d.restarts, d.train.epochs), (3, 8, 5000));
    }
}
